"""Write the pinned feature-pipeline golden files.

Everything is computed with plain Python floats (IEEE binary64, libm math
functions), independently of the Rust code. Values are stored as the u64
bit patterns of the doubles so the comparison can be bit-exact.

    python3 tools/make_feature_goldens.py crates/core/tests/golden
"""

import json
import math
import struct
import sys
from pathlib import Path


def bits(x):
    return struct.unpack("<Q", struct.pack("<d", float(x)))[0]


def bits_list(xs):
    return [bits(x) for x in xs]


def bits_matrix(rows):
    return [bits_list(r) for r in rows]


# -- segmentation ---------------------------------------------------------

def reflect_pad(x, target):
    """Mirror at both ends without repeating the edge sample."""
    out = list(x)
    if target <= len(x):
        return out
    if len(x) == 1:
        return out + [x[0]] * (target - 1)
    # Build by brute force: alternate reversed and forward copies.
    forward = False
    while len(out) < target:
        piece = x[1:] if forward else list(reversed(x[:-1]))
        out.extend(piece)
        forward = not forward
    return out[:target]


def segment(x, length_s, overlap, sr):
    n_len = int(round(length_s * sr))
    hop = max(1, int(round((1.0 - overlap) * n_len)))
    out = []
    start = 0
    covered = 0
    while start + n_len <= len(x):
        out.append(x[start:start + n_len])
        covered = start + n_len
        start += hop
    if covered < len(x):
        out.append(reflect_pad(x[start:], n_len))
    return out


# -- mel filterbank (HTK scale) -------------------------------------------

def hz_to_mel(hz):
    return 2595.0 * math.log10(1.0 + hz / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (mel / 2595.0) - 1.0)


def mel_bank(sr, nfft, n_mels, fmin, fmax):
    lo, hi = hz_to_mel(fmin), hz_to_mel(fmax)
    n_pts = n_mels + 2
    edges = [mel_to_hz(lo + (hi - lo) * i / (n_pts - 1)) for i in range(n_pts)]
    bin_hz = sr / nfft
    bank = []
    for m in range(n_mels):
        left, centre, right = edges[m], edges[m + 1], edges[m + 2]
        row = []
        for k in range(nfft // 2 + 1):
            f = k * bin_hz
            up = (f - left) / (centre - left)
            down = (right - f) / (right - centre)
            row.append(max(min(up, down), 0.0))
        bank.append(row)
    return bank


# -- log-mel --------------------------------------------------------------

def logmel(mags, bank, floor):
    n_mels, n_frames = len(bank), len(mags[0])
    out = []
    for m in range(n_mels):
        row = []
        for t in range(n_frames):
            s = 0.0
            for k in range(len(mags)):
                s += bank[m][k] * mags[k][t]
            row.append(math.log(max(s, floor)))
        out.append(row)
    return out


def main(out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    signal = [round(math.sin(0.7 * i) * 1000) / 1024 for i in range(37)]

    pad_cases = []
    for x, target in [
        (signal[:5], 5),
        (signal[:5], 8),
        (signal[:5], 13),
        (signal[:5], 21),
        (signal[:2], 7),
        (signal[:1], 4),
        (signal[:9], 30),
    ]:
        pad_cases.append({"input": bits_list(x), "target_len": target, "output": bits_list(reflect_pad(x, target))})
    (out / "reflect_pad.json").write_text(json.dumps({"cases": pad_cases}))

    seg_cases = []
    for x, overlap in [(signal, 0.0), (signal, 0.5), (signal[:4], 0.0), (signal[:30], 0.0), (signal[:20], 0.5)]:
        seg_cases.append(
            {
                "input": bits_list(x),
                "length_s": 1.0,
                "overlap_fraction": overlap,
                "sample_rate_hz": 10,
                "output": bits_matrix(segment(x, 1.0, overlap, 10)),
            }
        )
    (out / "segment.json").write_text(json.dumps({"cases": seg_cases}))

    bank_cases = []
    for sr, nfft, n_mels, fmin, fmax in [(16000, 512, 50, 0.0, 8000.0), (4000, 512, 32, 0.0, 2000.0), (4000, 256, 20, 50.0, 1800.0)]:
        bank_cases.append(
            {
                "sample_rate_hz": sr,
                "nfft": nfft,
                "n_mels": n_mels,
                "fmin_hz": fmin,
                "fmax_hz": fmax,
                "output": bits_matrix(mel_bank(sr, nfft, n_mels, fmin, fmax)),
            }
        )
    (out / "mel_filterbank.json").write_text(json.dumps({"cases": bank_cases}))

    # Dyadic inputs keep every product and partial sum exact, so the result
    # does not depend on summation order. The last bank row is silent and
    # exercises the floor.
    bank = [
        [0.5, 1.0, 0.5, 0.0, 0.0],
        [0.0, 0.25, 1.0, 0.25, 0.0],
        [0.0, 0.0, 0.0, 0.75, 1.0],
        [0.0, 0.0, 0.0, 0.0, 0.0],
    ]
    mags = [[(3 * k + 5 * t) % 11 / 8.0 for t in range(6)] for k in range(5)]
    floor = 1e-10
    (out / "logmel.json").write_text(
        json.dumps(
            {
                "bank": bits_matrix(bank),
                "mags": bits_matrix(mags),
                "floor": bits(floor),
                "output": bits_matrix(logmel(mags, bank, floor)),
            }
        )
    )

    feat = [[math.log(1.0 + r * 7 + c) for c in range(5)] for r in range(6)]
    (out / "flip.json").write_text(json.dumps({"input": bits_matrix(feat), "output": bits_matrix(feat[::-1])}))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "crates/core/tests/golden")
