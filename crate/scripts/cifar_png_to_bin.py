"""Rebuilds the CIFAR-10 binary batches from the PNG sprites in the
tfjs-cifar10 npm package. Each sprite row is one 32x32 RGB image."""

import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

src, dst = Path(sys.argv[1]), Path(sys.argv[2])
dst.mkdir(parents=True, exist_ok=True)
train_labels = json.loads((src / "train_lables.json").read_text())
test_labels = json.loads((src / "test_lables.json").read_text())

batches = [(f"data_batch_{i}", train_labels[(i - 1) * 10000 : i * 10000]) for i in range(1, 6)]
batches.append(("test_batch", test_labels))
for name, labels in batches:
    px = np.asarray(Image.open(src / f"{name}.png").convert("RGB"), dtype=np.uint8)
    assert px.shape == (10000, 1024, 3) and len(labels) == 10000, (name, px.shape)
    planes = px.transpose(0, 2, 1).reshape(10000, 3072)
    rec = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], planes], axis=1)
    (dst / f"{name}.bin").write_bytes(rec.tobytes())
    print(f"{name}.bin: {len(labels)} records")
