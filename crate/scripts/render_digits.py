"""Render the bundled 28x28 handwritten-style digit images.

Each digit is drawn large with a bold sans font, slightly rotated and
sheared, fitted into a 20x20 box and centred by mass inside a 28x28
black frame, mimicking the MNIST preprocessing.
"""
import sys
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFilter, ImageFont

FONT = "/usr/share/fonts/truetype/dejavu/DejaVuSans-Bold.ttf"
# (rotation degrees, shear) per digit, fixed for reproducibility
STYLE = [(-8, 0.10), (5, -0.15), (-4, 0.20), (7, 0.05), (-10, -0.10),
         (3, 0.15), (-6, 0.0), (9, 0.12), (-3, -0.08), (6, 0.18)]


def render(digit: int) -> Image.Image:
    rot, shear = STYLE[digit]
    font = ImageFont.truetype(FONT, 160)
    canvas = Image.new("L", (256, 256), 0)
    ImageDraw.Draw(canvas).text((128, 128), str(digit), fill=255, font=font, anchor="mm")
    canvas = canvas.transform(canvas.size, Image.AFFINE, (1, shear, -shear * 128, 0, 1, 0),
                              resample=Image.BICUBIC)
    canvas = canvas.rotate(rot, resample=Image.BICUBIC)
    canvas = canvas.crop(canvas.getbbox())
    w, h = canvas.size
    s = 20.0 / max(w, h)
    canvas = canvas.resize((max(1, round(w * s)), max(1, round(h * s))), Image.LANCZOS)
    arr = np.asarray(canvas, dtype=np.float64)
    ys, xs = np.mgrid[0:arr.shape[0], 0:arr.shape[1]]
    cy = (arr * ys).sum() / arr.sum()
    cx = (arr * xs).sum() / arr.sum()
    out = Image.new("L", (28, 28), 0)
    out.paste(canvas, (int(round(14 - cx)), int(round(14 - cy))))
    return out.filter(ImageFilter.GaussianBlur(0.4))


def main(dest: str) -> None:
    d = Path(dest)
    d.mkdir(parents=True, exist_ok=True)
    for k in range(10):
        render(k).save(d / f"digit_{k}.png", optimize=False)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "crates/core/tests/data/digits")
