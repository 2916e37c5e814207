#!/usr/bin/env python3
# Copyright 2026 The ltlab Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Writes the scikit-learn 8x8 digit set as an LTKT archive."""

import argparse
import struct

import numpy as np
from sklearn.datasets import load_digits
from sklearn.model_selection import train_test_split


def entry(name, array):
    if array.dtype == np.float32:
        dtype = 1
    elif array.dtype == np.uint8:
        dtype = 2
    else:
        raise ValueError(f"unsupported dtype {array.dtype}")
    raw = name.encode("utf-8")
    out = struct.pack("<I", len(raw)) + raw + struct.pack("<II", dtype, array.ndim)
    out += struct.pack(f"<{array.ndim}Q", *array.shape)
    return out + np.ascontiguousarray(array).astype(array.dtype.newbyteorder("<")).tobytes()


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="data/digits.ltkt")
    parser.add_argument("--test-size", type=int, default=360)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    digits = load_digits()
    images = (digits.images / 16.0).astype(np.float32)[:, None, :, :]
    labels = digits.target.astype(np.uint8)
    xtr, xte, ytr, yte = train_test_split(
        images, labels, test_size=args.test_size, random_state=args.seed, stratify=labels)
    entries = sorted({"train.images": xtr, "train.labels": ytr,
                      "test.images": xte, "test.labels": yte}.items())
    blob = b"LTKT" + struct.pack("<II", 1, len(entries))
    blob += b"".join(entry(name, array) for name, array in entries)
    with open(args.out, "wb") as f:
        f.write(blob)
    print(f"wrote {args.out}: {len(ytr)} train / {len(yte)} test")


if __name__ == "__main__":
    main()
