"""Byte-level tokenizer with role markers.

Byte-exact by construction: decoding any span of byte tokens reproduces the
original text, which is what makes the loss-mask audit (masked spans decode
to assistant text, nothing else) airtight.
"""
from __future__ import annotations

BYTE_VOCAB = 256
PAD, BOS, SYS, USR, ASST, END = (BYTE_VOCAB + i for i in range(6))
VOCAB_SIZE = BYTE_VOCAB + 6

_ROLE_TOKENS = {"system": SYS, "user": USR, "assistant": ASST}


def encode_text(text: str) -> list[int]:
    return list(text.encode("utf-8"))


def decode(ids: list[int], skip_special: bool = True) -> str:
    data = bytes(i for i in ids if i < BYTE_VOCAB)
    if not skip_special and any(i >= BYTE_VOCAB for i in ids):
        raise ValueError("special tokens present")
    return data.decode("utf-8", errors="replace")


def encode_conversation(
    system: str,
    turns: list[dict],
    add_generation_prompt: bool = False,
) -> tuple[list[int], list[int]]:
    """Token ids and labels for one chat record.

    Layout: <bos> <sys> system-bytes <end> then per turn a role marker, the
    content bytes, and <end>. Labels are -100 everywhere except assistant
    content bytes and their <end> terminator (the model must learn to stop).
    """
    ids = [BOS, SYS, *encode_text(system), END]
    labels = [-100] * len(ids)
    for turn in turns:
        role_token = _ROLE_TOKENS[turn["role"]]
        content = encode_text(turn["content"])
        ids.append(role_token)
        labels.append(-100)
        ids.extend(content)
        ids.append(END)
        if turn["role"] == "assistant" and turn.get("loss", True):
            labels.extend(content)
            labels.append(END)
        else:
            labels.extend([-100] * (len(content) + 1))
    if add_generation_prompt:
        ids.append(ASST)
        labels.append(-100)
    return ids, labels
