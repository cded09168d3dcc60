#!/usr/bin/env python3
"""Regenerates the bundled fixtures under data/.

data/mnist/*: a class-balanced subset of the 5000-sample MNIST extract
shipped inside the mlxtend wheel (mlxtend/data/data/mnist_5k.csv.gz, 500
digits per class, sorted by label), written as IDX files. For each class the
first 200 digits go to the train split and the next 100 to the test split;
both splits are then interleaved class by class (0,1,...,9,0,1,...).

data/images/*: scikit-image's astronaut (public-domain NASA photo) cropped to
the face region and box-downsampled to 64x64 and 2x2 P6 PPM files.

Usage: make_fixtures.py PATH_TO_mnist_5k.csv.gz OUT_DATA_DIR
"""
import gzip
import os
import struct
import sys

import numpy as np


def write_idx_images(path, images):
    n, h, w = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, h, w))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def write_ppm(path, rgb):
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(rgb.astype(np.uint8).tobytes())


def box_down(img, size):
    h, w, c = img.shape
    f = h // size
    return img[: f * size, : f * size].reshape(size, f, size, f, c).mean(axis=(1, 3))


def main():
    csv_path, out = sys.argv[1], sys.argv[2]
    with gzip.open(csv_path, "rt") as f:
        rows = np.loadtxt(f, delimiter=",")
    x = rows[:, :-1].reshape(-1, 28, 28)
    y = rows[:, -1].astype(int)
    os.makedirs(os.path.join(out, "mnist"), exist_ok=True)
    by_class = [np.flatnonzero(y == c) for c in range(10)]
    splits = {
        "train": np.stack([idx[0:200] for idx in by_class], axis=1).reshape(-1),
        "test": np.stack([idx[200:300] for idx in by_class], axis=1).reshape(-1),
    }
    for name, sel in splits.items():
        write_idx_images(os.path.join(out, "mnist", f"{name}-images.idx3-ubyte"), x[sel])
        write_idx_labels(os.path.join(out, "mnist", f"{name}-labels.idx1-ubyte"), y[sel])

    import skimage.data

    img = skimage.data.astronaut()[0:256, 128:384].astype(np.float64)
    os.makedirs(os.path.join(out, "images"), exist_ok=True)
    write_ppm(os.path.join(out, "images", "astronaut64.ppm"), np.round(box_down(img, 64)))
    write_ppm(os.path.join(out, "images", "astronaut2.ppm"), np.round(box_down(img, 2)))


if __name__ == "__main__":
    main()
