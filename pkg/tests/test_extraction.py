"""Fenced-code extraction from chat responses."""
from __future__ import annotations

from hypothesis import given
from hypothesis import strategies as st

from autoanalyst import extract_code_block, wrap_code_block


def test_plain_fence():
    got = extract_code_block("```\nprint(1)\n```")
    assert got.text == "print(1)"
    assert got.fenced


def test_language_tag_and_prose():
    response = "Sure, here you go:\n\n```python\nx = 1\nprint(x)\n```\nHope that helps."
    got = extract_code_block(response)
    assert got.text == "x = 1\nprint(x)"
    assert got.fenced


def test_first_fence_wins():
    response = "```python\nfirst\n```\nand then\n```python\nsecond\n```"
    assert extract_code_block(response).text == "first"


def test_trailing_spaces_around_fences():
    response = "``` python \ncode line\n   ```"
    got = extract_code_block(response)
    assert got.text == "code line"
    assert got.fenced


def test_unfenced_response_taken_verbatim():
    response = "import csv\nprint('no fence here')"
    got = extract_code_block(response)
    assert got.text == response
    assert not got.fenced


def test_empty_response():
    got = extract_code_block("")
    assert got.text == ""
    assert not got.fenced


@given(st.text(alphabet=st.characters(exclude_characters="`"), max_size=300))
def test_wrap_then_extract_round_trips(script):
    got = extract_code_block(wrap_code_block(script))
    assert got.fenced
    assert got.text == script


@given(
    st.text(alphabet=st.characters(exclude_characters="`"), max_size=80),
    st.text(alphabet=st.characters(exclude_characters="`"), max_size=80),
    st.text(alphabet=st.characters(exclude_characters="`"), max_size=200),
)
def test_round_trip_survives_surrounding_prose(lead, trail, script):
    response = f"{lead}\n{wrap_code_block(script)}\n{trail}"
    got = extract_code_block(response)
    assert got.fenced
    assert got.text == script
