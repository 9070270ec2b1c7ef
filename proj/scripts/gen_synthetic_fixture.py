#!/usr/bin/env python3
"""Writes the 60-instance edos-b fixture used by the end-to-end tests.

Routing is made independent of the fitted temperature: accepted instances
carry a 12-logit lead, escalated ones a 0.2 lead, and the config pins the
temperature search to [0.5, 2] and the routing grid to a single cell. Expected
scores are computed here, independently of the C++ metrics code.
"""

import json
import random
from pathlib import Path

LABELS = [
    "1. threats, plans to harm and incitement",
    "2. derogation",
    "3. animosity",
    "4. prejudiced discussions",
]
A, B, C, D = range(4)

PERSONAS = ["Normal Person", "Linguist", "Psychologist", "Legal Studies Expert", "Gender Studies Expert",
            "Sexism Victim"]

# (gold, specialist) for accepted instances.
ACCEPTED = (
    [(A, A)] * 7 + [(A, B)]
    + [(B, B)] * 12 + [(B, C)] * 2
    + [(C, C)] * 9 + [(C, D)]
    + [(D, D)] * 7 + [(D, B)]
)

# (gold, specialist, judge label or None for an unparseable judge reply, special path)
ESCALATED = (
    [(A, A, A, None)] * 2 + [(A, A, B, None), (A, B, B, None)]
    + [(B, C, B, None)] * 2 + [(B, C, B, "summary_blank")] + [(B, B, B, None)] * 2
    + [(C, D, C, None)] * 2 + [(C, D, C, "abstain")] + [(C, C, C, None)] * 2 + [(C, B, C, None)]
    + [(D, C, D, None)] * 2 + [(D, D, D, None), (D, D, None, "judge_unparseable"), (D, A, D, None)]
)

TOPICS = [
    "the office meeting",
    "the football match",
    "a viral video",
    "the election debate",
    "a cooking show",
    "the new phone release",
]


def text_for(idx, split):
    return f"Synthetic {split} post #{idx:03d}: remarks about {TOPICS[idx % len(TOPICS)]}."


def logits_for(pred, lead):
    z = [0.0] * 4
    z[pred] = lead
    if lead < 1.0:
        z[(pred + 1) % 4] = lead / 2
    return z


def f1_scores(gold, pred):
    out = []
    for c in range(4):
        tp = sum(1 for g, p in zip(gold, pred) if g == c and p == c)
        fp = sum(1 for g, p in zip(gold, pred) if g != c and p == c)
        fn = sum(1 for g, p in zip(gold, pred) if g == c and p != c)
        out.append(0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn))
    return out


def opinion(persona, label):
    return json.dumps({
        "persona": persona,
        "label": LABELS[label],
        "justification": "The wording targets women as a group.",
        "confidence": 0.7,
    })


def debate(label, abstained):
    turns = []
    for i, name in enumerate(PERSONAS):
        if abstained and i == 0:
            continue
        peer = PERSONAS[(i + 1) % len(PERSONAS)]
        turns.append({
            "persona": name,
            "intent": "The author belittles women.",
            "reaction": f"Agree with {peer} because the framing is gendered.",
            "updated_reasoning": "The panel view holds.",
            "final_stance": f"{LABELS[label]} (unchanged)",
            "updated_confidence": 0.8,
        })
    return json.dumps(turns)


def main():
    root = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "synthetic"
    root.mkdir(parents=True, exist_ok=True)
    rng = random.Random(20240611)

    dev = []
    for i in range(40):
        gold = i % 4
        z = [round(rng.gauss(0.0, 1.0), 4) for _ in range(4)]
        z[gold] = round(z[gold] + 1.5, 4)
        dev.append({"instance_id": f"dev-{i:03d}", "text": text_for(i, "dev"), "gold_label": LABELS[gold], "logits": z})

    test, rows = [], []
    order = [("acc", r) for r in ACCEPTED] + [("esc", r) for r in ESCALATED]
    rng.shuffle(order)
    for i, (kind, row) in enumerate(order):
        gold, spec = row[0], row[1]
        lead = 12.0 if kind == "acc" else 0.2
        iid = f"syn-{i:03d}"
        test.append({"instance_id": iid, "text": text_for(i, "test"), "gold_label": LABELS[gold],
                     "logits": logits_for(spec, lead)})
        rows.append((iid, i, kind, row))

    rules = []
    final = {}
    for iid, i, kind, row in rows:
        gold, spec = row[0], row[1]
        if kind == "acc":
            final[iid] = spec
            continue
        judge, special = row[2], row[3]
        tag = f"#{i:03d}:"
        consensus = judge if judge is not None else spec
        if special == "abstain":
            rules.append({"name": f"{iid}-abstain", "match": {"contains": [tag, "You are an average person"]},
                          "responses": [{"content": "I would rather not say.", "latency_ms": 5}]})
        rules.append({"name": f"{iid}-opinion", "match": {"contains": [tag, "tasked with classifying"]},
                      "responses": [{"content": opinion("Panelist", consensus), "latency_ms": 5}]})
        rules.append({"name": f"{iid}-debate", "match": {"contains": [tag, "You are continuing the expert panel"]},
                      "responses": [{"content": debate(consensus, special == "abstain"), "latency_ms": 5}]})
        summary = "" if special == "summary_blank" else "The panel agreed on the category after a short exchange."
        rules.append({"name": f"{iid}-summary", "match": {"contains": [tag, "You are summarizing"]},
                      "responses": [{"content": summary, "latency_ms": 5}]})
        verdict = ("I cannot decide on this one." if judge is None else
                   json.dumps({"label": LABELS[judge], "justification": "Consistent with the panel.", "confidence": 0.8}))
        rules.append({"name": f"{iid}-judge", "match": {"contains": [tag, "You are an impartial judge"]},
                      "responses": [{"content": verdict, "latency_ms": 5}]})
        final[iid] = judge if judge is not None else spec

    gold = [r[3][0] for r in rows]
    base = [r[3][1] for r in rows]
    routed = [final[r[0]] for r in rows]
    bf, rf = f1_scores(gold, base), f1_scores(gold, routed)
    escalated = sum(1 for r in rows if r[2] == "esc")
    expected = {
        "total": len(rows),
        "accepted": len(rows) - escalated,
        "escalated": escalated,
        "llm_calls": escalated * 9,
        "degraded": sum(1 for r in rows if r[2] == "esc" and r[3][3] in ("abstain", "summary_blank")),
        "fallback": sum(1 for r in rows if r[2] == "esc" and r[3][2] is None),
        "baseline_macro_f1": sum(bf) / 4,
        "routed_macro_f1": sum(rf) / 4,
        "classes": [
            {"label": LABELS[c], "n": gold.count(c), "baseline_f1": bf[c], "routed_f1": rf[c], "gain": rf[c] - bf[c]}
            for c in range(4)
        ],
    }

    def dump_jsonl(path, items):
        path.write_text("".join(json.dumps(x) + "\n" for x in items))

    dump_jsonl(root / "dev.jsonl", dev)
    dump_jsonl(root / "test.jsonl", test)
    (root / "mock_script.json").write_text(json.dumps({"rules": rules}, indent=1) + "\n")
    (root / "expected.json").write_text(json.dumps(expected, indent=2) + "\n")

    config = {
        "task_id": "edos-b",
        "workspace": ".",
        "run_id": "synthetic",
        "mode": "full",
        "seed": 7,
        "paths": {"dev": "dev.jsonl", "test": "test.jsonl", "output_dir": "out"},
        "calibration": {"t_lo": 0.5, "t_hi": 2.0, "tolerance": 1e-4},
        "routing": {"tau_conf": [0.6], "tau_margin": [0.3], "objective": "lexicographic",
                    "provider": {"kind": "proxy", "q": 0.8}},
        "cej": {"stage": "P5", "parse_retries": 0, "workers": 1},
        "gateway": {
            "backend": {
                "personas": {"url": "http://127.0.0.1:9/v1/chat/completions", "model": "mock-personas"},
                "judge": {"url": "http://127.0.0.1:9/v1/chat/completions", "model": "mock-judge"},
            },
            "sampling": {"temperature": 0.0, "seed": 7, "max_tokens": 512},
            "retry": {"max_attempts": 1, "base_backoff_ms": 0},
            "mock_script": "mock_script.json",
        },
    }
    (root / "config.json").write_text(json.dumps(config, indent=2) + "\n")


if __name__ == "__main__":
    main()
