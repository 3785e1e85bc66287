#!/usr/bin/env python3
# Copyright 2026 The Plate Authors
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
"""Convert a torchvision MobileNet-v2 state dict to a plate weight file.

    convert_torchvision.py out.plf --pretrained          # ImageNet weights (downloads)
    convert_torchvision.py out.plf --state-dict sd.pth   # a saved state_dict
    convert_torchvision.py out.plf --random --seed 3     # random init, for tests
"""

import argparse
import json
import struct
import sys

import numpy as np

MAGIC = b"PLF1"
FORMAT_VERSION = 1
SETTINGS = [[1, 16, 1, 1], [6, 24, 2, 2], [6, 32, 3, 2], [6, 64, 4, 2], [6, 96, 3, 1], [6, 160, 3, 2], [6, 320, 1, 1]]


def spec_json(num_classes, resolution=224):
    return {
        "resolution": resolution,
        "stem_channels": 32,
        "settings": SETTINGS,
        "head_width": 1280,
        "num_classes": num_classes,
        "bn_epsilon": 1e-5,
    }


def write_plf(path, state_dict, labels, resolution=224):
    entries, blobs, offset = [], [], 0
    for name, tensor in state_dict.items():
        if name.endswith("num_batches_tracked"):
            continue
        array = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype="<f4")
        entries.append({"name": name, "shape": list(array.shape), "offset": offset})
        blobs.append(array.tobytes())
        offset += array.nbytes
    num_classes = state_dict["classifier.1.weight"].shape[0]
    if labels is None:
        labels = [f"class_{i}" for i in range(num_classes)]
    if len(labels) != num_classes:
        sys.exit(f"error: {len(labels)} labels for {num_classes} classes")
    manifest = {
        "format_version": FORMAT_VERSION,
        "metadata": {
            "kind": "mobilenet_v2",
            "num_classes": num_classes,
            "input_resolution": resolution,
            "labels": labels,
            "spec": spec_json(num_classes, resolution),
        },
        "entries": entries,
    }
    text = json.dumps(manifest, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(text)))
        f.write(text)
        for b in blobs:
            f.write(b)


def main():
    import torch
    import torchvision

    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("out")
    src = ap.add_mutually_exclusive_group(required=True)
    src.add_argument("--pretrained", action="store_true", help="torchvision ImageNet weights")
    src.add_argument("--state-dict", help="file saved with torch.save(model.state_dict())")
    src.add_argument("--random", action="store_true", help="torchvision's random initialization")
    ap.add_argument("--num-classes", type=int, default=1000)
    ap.add_argument("--labels", help="text file with one label per line, in class-index order")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    labels = None
    if args.pretrained:
        weights = torchvision.models.MobileNet_V2_Weights.IMAGENET1K_V1
        model = torchvision.models.mobilenet_v2(weights=weights)
        labels = list(weights.meta["categories"])
    else:
        torch.manual_seed(args.seed)
        model = torchvision.models.mobilenet_v2(num_classes=args.num_classes)
        if args.state_dict:
            model.load_state_dict(torch.load(args.state_dict, map_location="cpu"))
    if args.labels:
        with open(args.labels) as f:
            labels = [line.strip() for line in f if line.strip()]
    write_plf(args.out, model.state_dict(), labels)


if __name__ == "__main__":
    main()
