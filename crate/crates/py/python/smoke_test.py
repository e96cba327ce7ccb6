"""Smoke test for the hopsum extension module.

Build and install first, e.g. `maturin develop -m crates/py/Cargo.toml`,
then run `python crates/py/python/smoke_test.py`.
"""

import hopsum


def main():
    assert hopsum.exact_match("the cuban missile crisis", ["Cuban Missile Crisis"])
    assert abs(hopsum.token_f1("Nixon", ["President Richard Nixon"]) - 0.5) < 1e-12
    assert hopsum.compression_rate(100, 4) == 25.0
    assert hopsum.compression_rate(100, 0) is None
    assert hopsum.distinct_pick([["a", "b"], ["a"]]) == [1, 0]
    assert hopsum.distinct_pick([["a"], ["a"]]) is None

    world = hopsum.synthetic_world(12, seed=7)
    assert len(world["examples"]) == 12
    out = hopsum.synthesize(world["examples"], world["retrieval"], {"hops": [1, 2]}, workers=2)
    records = out["records"]
    assert records and all(r["hop_count"] in (1, 2) for r in records)
    for r in records:
        hopsum.check_record(r)
    assert out["report"]["calls"]["composer"] == 12 * 3

    again = hopsum.synthesize(world["examples"], world["retrieval"], {"hops": [1, 2]}, workers=1)
    assert again["records"] == records

    docs = world["retrieval"][0]["documents"]
    chunks = hopsum.shuffle_chunks(docs, 2, 3)
    assert sum(len(c) for c in chunks) == len(docs)
    summary = hopsum.compress(world["eval_examples"][0]["question"], docs, "mock://world")
    assert isinstance(summary, str)

    rows = [
        {"id": "a", "prediction": "Paris", "answers": ["Paris"], "input_words": 100, "output_words": 10},
        {"id": "b", "prediction": "Lyon", "answers": ["Nice"], "input_words": 100, "output_words": 10},
    ]
    _, report = hopsum.evaluate(rows, label="smoke")
    assert report["em"] == 50.0 and report["compression_rate"] == 10.0

    merged, stats = hopsum.merge([("one", records[:3]), ("two", records[3:])])
    assert len(merged) == len(records) and stats
    print(hopsum.stats_table(merged))

    try:
        hopsum.synthesize(world["examples"], world["retrieval"], {"hops": [0]})
    except ValueError:
        pass
    else:
        raise AssertionError("hop count 0 accepted")
    print("smoke test passed")


if __name__ == "__main__":
    main()
