#!/usr/bin/env python3
"""Text-to-text backend plugin for stancekit's process backend.

Reads one JSON request per line on stdin and writes one JSON reply per line
on stdout. Checkpoints are either a directory saved by `save_pretrained`, a
Hugging Face model id, or `tiny-random:<seed>`, which builds a small
randomly initialised byte-level T5 without any download.
"""

import json
import os
import random
import sys

os.environ.setdefault("HF_HUB_DISABLE_PROGRESS_BARS", "1")

import torch
from transformers.utils import logging as hf_logging
from transformers import ByT5Tokenizer, T5Config, T5ForConditionalGeneration

hf_logging.disable_progress_bar()

_cache = {}


def tokenizer():
    if "tok" not in _cache:
        _cache["tok"] = ByT5Tokenizer()
    return _cache["tok"]


def load(checkpoint):
    if checkpoint in _cache:
        return _cache[checkpoint]
    if checkpoint.startswith("tiny-random:"):
        torch.manual_seed(int(checkpoint.split(":", 1)[1]))
        cfg = T5Config(
            vocab_size=384,
            d_model=64,
            d_kv=16,
            d_ff=128,
            num_layers=2,
            num_decoder_layers=2,
            num_heads=4,
            decoder_start_token_id=0,
            pad_token_id=0,
            eos_token_id=1,
        )
        model = T5ForConditionalGeneration(cfg)
    else:
        model = T5ForConditionalGeneration.from_pretrained(checkpoint)
    model.eval()
    _cache[checkpoint] = model
    return model


def finetune(req):
    cfg = req["config"]
    seed = int(cfg["seed"]) % (2**32)
    random.seed(seed)
    torch.manual_seed(seed)
    tok = tokenizer()
    model = load(req["checkpoint"])
    # train a copy so the parent checkpoint stays usable
    model = type(model)(model.config)
    model.load_state_dict(load(req["checkpoint"]).state_dict())
    model.train()
    optim = torch.optim.AdamW(model.parameters(), lr=float(cfg["learning_rate"]))
    pairs = list(req["pairs"])
    batch = max(1, int(cfg["batch_size"]))
    losses = []
    for _ in range(int(cfg["epochs"])):
        random.shuffle(pairs)
        total, steps = 0.0, 0
        for i in range(0, len(pairs), batch):
            chunk = pairs[i : i + batch]
            enc = tok(
                [p["source"] for p in chunk],
                max_length=int(cfg["max_source_len"]),
                truncation=True,
                padding=True,
                return_tensors="pt",
            )
            labels = tok(
                [p["target"] for p in chunk],
                max_length=int(cfg["max_target_len"]),
                truncation=True,
                padding=True,
                return_tensors="pt",
            ).input_ids
            labels[labels == tok.pad_token_id] = -100
            loss = model(**enc, labels=labels).loss
            optim.zero_grad()
            loss.backward()
            optim.step()
            total += loss.item()
            steps += 1
        losses.append(total / max(steps, 1))
    model.eval()
    out_dir = req["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    model.save_pretrained(out_dir)
    _cache[out_dir] = model
    return {"ok": True, "losses": losses}


def generate(req):
    cfg = req["config"]
    tok = tokenizer()
    model = load(req["checkpoint"])
    decoding = cfg["decoding"]
    kwargs = {"max_new_tokens": int(cfg["max_new_tokens"])}
    if decoding["strategy"] == "beam":
        kwargs["num_beams"] = int(decoding["width"])
    elif decoding["strategy"] == "sample":
        torch.manual_seed(int(decoding["seed"]) % (2**32))
        kwargs.update(do_sample=True, temperature=float(decoding["temperature"]))
    outputs = []
    with torch.no_grad():
        for i in range(0, len(req["sources"]), 16):
            enc = tok(req["sources"][i : i + 16], padding=True, truncation=True, max_length=1024, return_tensors="pt")
            ids = model.generate(**enc, **kwargs)
            outputs.extend(tok.batch_decode(ids, skip_special_tokens=True))
    return {"ok": True, "outputs": outputs}


def main():
    torch.set_num_threads(max(1, min(4, os.cpu_count() or 1)))
    for line in sys.stdin:
        if not line.strip():
            continue
        try:
            req = json.loads(line)
            op = req.get("op")
            if op == "finetune":
                reply = finetune(req)
            elif op == "generate":
                reply = generate(req)
            elif op == "shutdown":
                print(json.dumps({"ok": True}), flush=True)
                return
            else:
                reply = {"ok": False, "error": f"unknown op {op!r}"}
        except Exception as exc:  # reported to the caller, never fatal
            reply = {"ok": False, "error": f"{type(exc).__name__}: {exc}"}
        print(json.dumps(reply), flush=True)


if __name__ == "__main__":
    main()
