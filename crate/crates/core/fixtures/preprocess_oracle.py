"""Reference tokenizer used to produce preprocess_cases.jsonl.

Usage: python3 preprocess_oracle.py < inputs.txt > preprocess_cases.jsonl
"""
import json
import re
import sys

SPECIALS = ["xxunk", "xxpad", "xxbos", "xxup", "xxmaj", "xxrep", "xxwrep"]


def runs(chunk):
    return [(m.group(1), len(m.group(0))) for m in re.finditer(r"(.)\1*", chunk, re.S)]


def units(text):
    out = []
    for chunk in text.split():
        buf = ""
        for ch, n in runs(chunk):
            if n >= 3:
                if buf:
                    out.append(("w", buf))
                    buf = ""
                out += [("m", "xxrep"), ("n", str(n)), ("w", ch)]
            else:
                buf += ch * n
        if buf:
            out.append(("w", buf))
    merged, i = [], 0
    while i < len(out):
        kind, val = out[i]
        j = i + 1
        if kind == "w":
            while j < len(out) and out[j] == ("w", val):
                j += 1
        if kind == "w" and j - i >= 3:
            merged += [("m", "xxwrep"), ("n", str(j - i)), ("w", val)]
            i = j
        else:
            merged.append(out[i])
            i += 1
    return merged


def marker(word):
    letters = [c for c in word if c.isupper() or c.islower()]
    if not letters:
        return None
    if len(letters) >= 2 and all(c.isupper() for c in letters):
        return "xxup"
    if letters[0].isupper() and not any(c.isupper() for c in letters[1:]):
        return "xxmaj"
    return None


def split(word):
    tokens, cur = [], ""
    for i, c in enumerate(word):
        inner = (
            c in "-'’"
            and i > 0
            and word[i - 1].isalnum()
            and i + 1 < len(word)
            and word[i + 1].isalnum()
        )
        if c.isalnum() or inner:
            cur += c
        else:
            if cur:
                tokens.append(cur)
                cur = ""
            tokens.append(c)
    if cur:
        tokens.append(cur)
    return tokens


def tokenize(text):
    out = ["xxbos"]
    for kind, val in units(text):
        if kind != "w":
            out.append(val)
            continue
        pending = marker(val)
        for tok in split(val.lower()):
            if pending and any(c.isalpha() for c in tok):
                out.append(pending)
                pending = None
            out.append("xxunk" if tok in SPECIALS else tok)
    return out


if __name__ == "__main__":
    for line in sys.stdin:
        text = json.loads(line)
        print(json.dumps({"input": text, "expected": tokenize(text)}, ensure_ascii=False))
