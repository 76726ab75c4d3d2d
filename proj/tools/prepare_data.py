#!/usr/bin/env python3
"""Convert the npm-packaged MNIST / Fashion-MNIST digit dumps into IDX files.

The npm packages `mnist` (10,000 MNIST digits, pixel values already divided
by 255 and rounded to 3 decimals) and `fashion-mnist` (70,000 raw byte images)
are reachable through the npm registry when the original dataset hosts are
not. This script re-encodes them in the standard IDX layout so that
`csad` can load them exactly like the upstream distribution files:

    <out>/mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte
    <out>/fashion_mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte

Split rule (per class, original package order): MNIST keeps the first 80 %
of each class for training and the rest for testing; Fashion-MNIST keeps the
first 6,000 images of each class for training and the next 1,000 for testing
(the upstream 60k/10k proportions).

Usage:
    npm pack mnist fashion-mnist
    tar xzf mnist-1.1.0.tgz && mv package mnist_pkg
    tar xzf fashion-mnist-1.1.0.tgz && mv package fashion_pkg
    python3 tools/prepare_data.py --mnist-pkg mnist_pkg --fashion-pkg fashion_pkg --out data
"""

import argparse
import json
import struct
from pathlib import Path


def write_idx_images(path, images, rows=28, cols=28):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), rows, cols))
        for img in images:
            f.write(bytes(img))


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def to_bytes(values):
    out = []
    for v in values:
        b = int(round(v * 255.0)) if isinstance(v, float) or v <= 1 else int(v)
        out.append(max(0, min(255, b)))
    return out


def load_mnist_pkg(pkg):
    per_class = []
    for c in range(10):
        flat = json.load(open(pkg / "src" / "digits" / f"{c}.json"))["data"]
        n = len(flat) // 784
        imgs = [to_bytes(flat[i * 784:(i + 1) * 784]) for i in range(n)]
        per_class.append(imgs)
    return per_class


def load_fashion_pkg(pkg):
    per_class = []
    for c in range(10):
        rows = json.load(open(pkg / "src" / "clothes" / f"{c}.json"))["data"]
        # The package carries a few empty rows; drop anything that is not a full image.
        per_class.append([[max(0, min(255, int(v))) for v in r] for r in rows if len(r) == 784])
    return per_class


def emit(per_class, out_dir, n_train_fn, n_test_fn):
    out_dir.mkdir(parents=True, exist_ok=True)
    splits = {"train": ([], []), "t10k": ([], [])}
    for c, imgs in enumerate(per_class):
        n_train = n_train_fn(len(imgs))
        n_test = n_test_fn(len(imgs), n_train)
        for img in imgs[:n_train]:
            splits["train"][0].append(img)
            splits["train"][1].append(c)
        for img in imgs[n_train:n_train + n_test]:
            splits["t10k"][0].append(img)
            splits["t10k"][1].append(c)
    # Interleave classes deterministically so the files are not class-sorted.
    for name, (imgs, labels) in splits.items():
        order = sorted(range(len(labels)), key=lambda i: ((i * 2654435761) % 4294967291, i))
        write_idx_images(out_dir / f"{name}-images-idx3-ubyte", [imgs[i] for i in order])
        write_idx_labels(out_dir / f"{name}-labels-idx1-ubyte", [labels[i] for i in order])
        print(f"{out_dir.name}/{name}: {len(labels)} images")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--mnist-pkg", type=Path)
    ap.add_argument("--fashion-pkg", type=Path)
    ap.add_argument("--out", type=Path, required=True)
    args = ap.parse_args()
    if args.mnist_pkg:
        emit(load_mnist_pkg(args.mnist_pkg), args.out / "mnist",
             lambda n: (n * 4) // 5, lambda n, t: n - t)
    if args.fashion_pkg:
        emit(load_fashion_pkg(args.fashion_pkg), args.out / "fashion_mnist",
             lambda n: 6000, lambda n, t: 1000)


if __name__ == "__main__":
    main()
