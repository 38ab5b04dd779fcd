"""Central finite-difference gradient checks in float64.

``check_grad`` compares autograd against central differences on a random
subset of coordinates of every input tensor, plus one directional derivative
along a random unit direction through all coordinates at once.  Errors are
norm-wise relative: ||g_fd - g_ad|| / max(||g_fd||, ||g_ad||, floor).
"""
import numpy as np
import torch


def _scalar(fn):
    with torch.no_grad():
        return float(fn())


def rel_error(a, b, floor=1e-8):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def check_grad(fn, tensors, eps=1e-6, max_coords=24, seed=0):
    """Return the worst relative error over per-coordinate and directional checks.

    ``fn`` is a zero-argument closure returning a scalar tensor built from
    ``tensors`` (float64 leaves with requires_grad).
    """
    rng = np.random.default_rng(seed)
    for t in tensors:
        t.grad = None
    fn().backward()
    grads = [t.grad.detach().clone() for t in tensors]
    worst = 0.0
    ad_all, fd_all = [], []
    for t, g in zip(tensors, grads):
        flat = t.data.view(-1)
        n = flat.numel()
        idx = rng.choice(n, size=min(n, max_coords), replace=False)
        for i in idx:
            orig = float(flat[i])
            flat[i] = orig + eps
            up = _scalar(fn)
            flat[i] = orig - eps
            down = _scalar(fn)
            flat[i] = orig
            fd_all.append((up - down) / (2 * eps))
            ad_all.append(float(g.view(-1)[i]))
    worst = max(worst, rel_error(fd_all, ad_all))

    dirs = [torch.from_numpy(rng.standard_normal(tuple(t.shape))).to(t.dtype) for t in tensors]
    scale = float(torch.sqrt(sum((d ** 2).sum() for d in dirs)))
    dirs = [d / scale for d in dirs]
    ad_dir = float(sum((g * d).sum() for g, d in zip(grads, dirs)))
    for t, d in zip(tensors, dirs):
        t.data.add_(eps * d)
    up = _scalar(fn)
    for t, d in zip(tensors, dirs):
        t.data.sub_(2 * eps * d)
    down = _scalar(fn)
    for t, d in zip(tensors, dirs):
        t.data.add_(eps * d)
    fd_dir = (up - down) / (2 * eps)
    worst = max(worst, rel_error([fd_dir], [ad_dir]))
    return worst


def module_params(module):
    return [p for p in module.parameters() if p.requires_grad]


def generic_point(module, seed=0, scale=0.1):
    """Jitter BatchNorm affine terms and running stats away from their init values.

    Freshly initialized BN has zero bias, so an all-zero post-ReLU patch lands
    a later pre-activation exactly on the ReLU kink, where no derivative exists.
    """
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, torch.nn.modules.batchnorm._BatchNorm):
                noise = lambda t: torch.randn(t.shape, generator=g, dtype=t.dtype) * scale  # noqa: E731
                m.weight.add_(noise(m.weight))
                m.bias.add_(noise(m.bias))
                m.running_mean.add_(noise(m.running_mean))
                m.running_var.mul_(torch.exp(noise(m.running_var)))
    return module
