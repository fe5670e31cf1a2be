"""Binary PPM (P6) / PGM (P5) 8-bit readers and writers."""
import numpy as np


def _tokens(data):
    # header tokens, skipping '#' comments; returns (tokens, offset of raster)
    toks, i = [], 0
    while len(toks) < 4:
        while data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while data[i:i + 1] not in (b"\n", b""):
                i += 1
            continue
        j = i
        while not data[j:j + 1].isspace():
            j += 1
        toks.append(data[i:j])
        i = j
    return toks, i + 1


def read_pnm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    toks, off = _tokens(data)
    magic, w, h, maxval = toks[0], int(toks[1]), int(toks[2]), int(toks[3])
    if maxval != 255 or magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: only 8-bit P5/P6 supported")
    ch = 3 if magic == b"P6" else 1
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h * ch, offset=off)
    arr = raster.reshape(h, w, ch).astype(np.float64) / 255.0
    return arr if ch == 3 else arr[:, :, 0]


def read_ppm(path):
    img = read_pnm(path)
    if img.ndim != 3:
        img = np.repeat(img[:, :, None], 3, axis=2)
    return img


def _quantise(arr):
    return np.clip(np.rint(np.asarray(arr) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, img):
    img = _quantise(img)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(img.tobytes())


def write_pgm(path, grey):
    """Write a [0, 1] map as 8-bit PGM (values outside the range are clipped)."""
    grey = _quantise(grey)
    h, w = grey.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(grey.tobytes())
