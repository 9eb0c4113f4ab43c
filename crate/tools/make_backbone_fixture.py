"""Reference forward passes for the backbone import test.

Builds torchvision ResNets in float64, fills every tensor from a closed-form
pattern that the Rust test reproduces, and records the pooled embedding and
classifier logits for a fixed input, plus the parameter key table of every
supported depth.

    python tools/make_backbone_fixture.py crates/core/tests/fixtures/backbone_reference.json
"""

import json
import math
import sys

import torch
import torchvision


def pattern(key: str, key_index: int, shape) -> torch.Tensor:
    n = math.prod(shape)
    base = torch.sin(0.37 * torch.arange(n, dtype=torch.float64) + 0.11 * key_index)
    leaf = key.rsplit(".", 1)[-1]
    if leaf == "running_var":
        v = 1.0 + 0.5 * base * base
    elif leaf == "running_mean":
        v = 0.1 * base
    elif len(shape) == 1 and leaf == "weight":
        v = 1.0 + 0.1 * base
    elif leaf == "bias":
        v = 0.1 * base
    else:
        fan_in = n // shape[0]
        v = base * math.sqrt(2.0 / fan_in)
    return v.reshape(shape)


def key_table(model):
    return [
        (k, list(t.shape))
        for k, t in model.state_dict().items()
        if not k.endswith("num_batches_tracked")
    ]


def main(out_path: str) -> None:
    torch.set_grad_enabled(False)
    builders = {
        18: torchvision.models.resnet18,
        34: torchvision.models.resnet34,
        50: torchvision.models.resnet50,
        101: torchvision.models.resnet101,
    }
    x = torch.sin(0.1 * torch.arange(3 * 64 * 64, dtype=torch.float64)).reshape(1, 3, 64, 64)
    out = {"input": "sin(0.1 * flat_index), shape [1, 3, 64, 64]", "depths": {}}
    for depth, build in builders.items():
        model = build(weights=None).double().eval()
        table = key_table(model)
        entry = {"keys": table}
        if depth in (18, 50):
            state = {k: pattern(k, i, shape) for i, (k, shape) in enumerate(table)}
            model.load_state_dict(state, strict=False)
            feats = torch.nn.Sequential(*list(model.children())[:-1])
            pooled = feats(x).flatten(1)
            entry["embedding"] = pooled[0].tolist()
            entry["logits"] = model.fc(pooled)[0].tolist()
        out["depths"][str(depth)] = entry
    with open(out_path, "w") as f:
        json.dump(out, f)


if __name__ == "__main__":
    main(sys.argv[1])
