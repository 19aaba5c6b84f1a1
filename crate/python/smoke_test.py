"""Smoke test for the polarqkd extension module.

Build and install first, e.g.
    maturin build --release -m crates/py/Cargo.toml -o dist && pip install dist/polarqkd-*.whl
"""

import json
import random

import polarqkd


def main():
    profile = polarqkd.ReliabilityProfile(0.03, 10)
    assert len(profile) == 1024
    assert sorted(profile.order) == list(range(1024))
    assert json.loads(profile.to_json())["n"] == 10

    code = profile.code(512)
    assert (code.block_len, code.k) == (1024, 512)
    rng = random.Random(1)
    info = [rng.randint(0, 1) for _ in range(code.k)]
    x = code.encode(info)
    assert list(code.decode(x, 0.03)) == info

    y = polarqkd.bsc(x, 0.01, seed=5)
    flips = sum(a != b for a, b in zip(x, y))
    assert 0 < flips < 40, flips

    outcome = polarqkd.Session(12, 2600, 0.02, seed=9).run(0)
    assert outcome.agreed and outcome.verified and outcome.final_keys_equal
    assert outcome.leak_bits > 4096 - 2600
    print(outcome)

    est = polarqkd.estimate_fer(10, 450, 0.02, trials=20, seed=2)
    assert est.fer_ci_low <= est.fer <= est.fer_ci_high
    print(est)

    assert polarqkd.secret_key_length(2**20, int(0.8 * 2**20), 0.01) > 0
    assert abs(polarqkd.h2(0.5) - 1.0) < 1e-12

    try:
        code.encode([2] * code.k)
    except ValueError:
        pass
    else:
        raise AssertionError("expected ValueError")
    print("smoke test passed")


if __name__ == "__main__":
    main()
