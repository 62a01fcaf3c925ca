#!/usr/bin/env python3
"""Write the reference dynamic scene (and its tuned config) to disk.

Usage: python scripts/make_reference_scene.py [out_dir]

Produces out_dir/reference_scene.json and out_dir/reference_config.txt,
ready for `dynlo simulate` and `dynlo run`.
"""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from dynlo.config import dump_config
from dynlo.simulate import reference_config, reference_dynamic_scene, scene_to_json


def main():
    out_dir = sys.argv[1] if len(sys.argv) > 1 else "."
    os.makedirs(out_dir, exist_ok=True)
    scene_path = os.path.join(out_dir, "reference_scene.json")
    with open(scene_path, "w") as fh:
        fh.write(scene_to_json(reference_dynamic_scene()))
    config_path = os.path.join(out_dir, "reference_config.txt")
    with open(config_path, "w") as fh:
        fh.write(dump_config(reference_config()))
    print(f"wrote {scene_path}")
    print(f"wrote {config_path}")


if __name__ == "__main__":
    main()
