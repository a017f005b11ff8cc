import numpy as np
import torch


def check_type(array):

    if not array.dtype == np.float64:
        return array.astype(np.float64)

    return array


def check_contig(array):

    if not array.flags["C_CONTIGUOUS"]:
        return np.ascontiguousarray(array)

    return array


def check_pixels(array):
    """Return an ``(H, W, 3)`` uint8 C-contiguous view of a pixel buffer."""
    array = np.asarray(array)

    if array.ndim == 2:
        array = np.repeat(array[:, :, None], 3, axis=2)

    if array.ndim != 3 or array.shape[2] not in (3, 4):
        raise ValueError("pixel buffer must be (H, W, 3), got {}".format(array.shape))

    array = array[:, :, :3]

    if not array.dtype == np.uint8:
        array = np.clip(array, 0, 255).astype(np.uint8)

    return check_contig(array)


def l2_normalize(values, eps=1e-12):
    """L2-normalise the rows of a tensor, keeping its dtype and graph."""
    return values / values.norm(dim=-1, keepdim=True).clamp_min(eps)


def pixels_to_tensor(patches):
    """Stack equally sized uint8 patches into a ``(N, 3, H, W)`` float batch.

    Values are scaled to ``[0, 1]``; encoders apply their own normalisation.
    """
    batch = np.stack([check_pixels(p) for p in patches])
    batch = check_contig(batch.transpose(0, 3, 1, 2))

    return torch.from_numpy(batch).to(torch.float32) / 255.0
