import base64
import io

import numpy as np
from PIL import Image


def png_b64(arr: np.ndarray) -> str:
    img = Image.fromarray((np.clip(arr, 0.0, 1.0) * 255).round().astype(np.uint8))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")
