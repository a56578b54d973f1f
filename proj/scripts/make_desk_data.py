#!/usr/bin/env python3
"""Build the reduced desk datasets shipped under data/desk/.

Sources are the npm packages `mnist-data` (IDX files of the standard MNIST
release) and `fashion-mnist` (per-class JSON arrays of uint8 pixels).
Run scripts/fetch_data.sh first; it unpacks both into a scratch directory.

Output (gzip-compressed IDX, readable by `permweld` directly):
  mnist-{train,test}-{images,labels}.idx.gz    10000 / 2000 rows
  fmnist-{train,test}-{images,labels}.idx.gz   10000 / 2000 rows
"""
import argparse
import gzip
import json
import os
import struct

TRAIN_ROWS = 10000
TEST_ROWS = 2000
PER_CLASS_TRAIN = TRAIN_ROWS // 10
PER_CLASS_TEST = TEST_ROWS // 10


def read_idx(path):
    with open(path, "rb") as f:
        raw = f.read()
    magic = struct.unpack(">I", raw[:4])[0]
    if magic == 0x803:
        n, h, w = struct.unpack(">III", raw[4:16])
        return raw[16:], n, h, w
    if magic == 0x801:
        (n,) = struct.unpack(">I", raw[4:8])
        return raw[8:], n, 0, 0
    raise ValueError(f"{path}: bad magic {magic:#x}")


def write_images(path, pixels, n, h, w):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, n, h, w))
        f.write(bytes(pixels))


def write_labels(path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def mnist(src, out):
    for split, rows, stem in (("train", TRAIN_ROWS, "train"), ("test", TEST_ROWS, "t10k")):
        img, n, h, w = read_idx(os.path.join(src, f"{stem}-images-idx3-ubyte"))
        lab, m, _, _ = read_idx(os.path.join(src, f"{stem}-labels-idx1-ubyte"))
        assert n == m and n >= rows
        write_images(os.path.join(out, f"mnist-{split}-images.idx.gz"), img[: rows * h * w], rows, h, w)
        write_labels(os.path.join(out, f"mnist-{split}-labels.idx.gz"), lab[:rows])


def fmnist(src, out):
    per_class = []
    for c in range(10):
        with open(os.path.join(src, f"{c}.json")) as f:
            rows = json.load(f)["data"]
        # the package's class-0 file carries two empty rows
        per_class.append([r for r in rows if len(r) == 28 * 28])
    for split, lo, hi in (("train", 0, PER_CLASS_TRAIN),
                          ("test", PER_CLASS_TRAIN, PER_CLASS_TRAIN + PER_CLASS_TEST)):
        pixels, labels = bytearray(), []
        # interleave classes so any prefix stays roughly balanced
        for i in range(lo, hi):
            for c in range(10):
                pixels.extend(per_class[c][i])
                labels.append(c)
        write_images(os.path.join(out, f"fmnist-{split}-images.idx.gz"), pixels, len(labels), 28, 28)
        write_labels(os.path.join(out, f"fmnist-{split}-labels.idx.gz"), labels)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--mnist-idx", required=True, help="directory with the four MNIST IDX files")
    ap.add_argument("--fmnist-json", required=True, help="directory with fashion-mnist 0.json..9.json")
    ap.add_argument("--out", default="data/desk")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    mnist(args.mnist_idx, args.out)
    fmnist(args.fmnist_json, args.out)


if __name__ == "__main__":
    main()
