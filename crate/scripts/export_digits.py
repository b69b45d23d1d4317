"""Write the scikit-learn 8x8 handwritten digits set as IDX files.

Pixels (0..16) are rescaled to 0..255. Output goes to data/digits/.
"""
import pathlib
import struct

import numpy as np
from sklearn.datasets import load_digits

out = pathlib.Path(__file__).resolve().parent.parent / "data" / "digits"
out.mkdir(parents=True, exist_ok=True)

digits = load_digits()
images = np.rint(digits.images * 255.0 / 16.0).astype(np.uint8)
labels = digits.target.astype(np.uint8)
n, rows, cols = images.shape

with open(out / "digits-images-idx3-ubyte", "wb") as f:
    f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
    f.write(images.tobytes())

with open(out / "digits-labels-idx1-ubyte", "wb") as f:
    f.write(struct.pack(">II", 0x00000801, n))
    f.write(labels.tobytes())

print(f"wrote {n} images of {rows}x{cols} to {out}")
