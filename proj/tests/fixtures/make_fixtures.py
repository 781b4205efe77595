"""Independent reference values computed with PyTorch (float64).

Inputs are closed-form so the C++ tests can rebuild them without files:
    wave(n, a, b, amp) = [amp * sin(a * i + b) for i in range(n)]
Run: python3 tests/fixtures/make_fixtures.py > tests/fixtures/reference_values.hpp
"""
import math
import torch
import torch.nn.functional as F

torch.set_default_dtype(torch.float64)
print("#pragma once\n// Generated by make_fixtures.py; do not edit.\n\n#include <vector>\n\nnamespace fixtures {\n")


def wave(n, a, b, amp=1.0):
    return torch.tensor([amp * math.sin(a * i + b) for i in range(n)])


def show(name, t):
    vals = ", ".join(f"{v:.17g}" for v in t.flatten().tolist())
    print(f"inline const std::vector<double> {name} = {{{vals}}};")


# depthwise 3x3, NHWC (1,3,3,2), kernels [D,3,3]
x = wave(18, 0.7, 0.0).reshape(1, 3, 3, 2)
k = wave(18, 0.3, 0.5).reshape(2, 3, 3)
b = torch.tensor([0.1, -0.2])
y = F.conv2d(x.permute(0, 3, 1, 2), k.unsqueeze(1), b, padding=1, groups=2).permute(0, 2, 3, 1)
show("dwconv", y)

# patch embed: x (1,4,4,3), weight [P,P,C,D] = (2,2,3,2)
x = wave(48, 0.37, 0.1).reshape(1, 4, 4, 3)
w = wave(24, 0.53, 0.2, 0.5).reshape(2, 2, 3, 2)
b = torch.tensor([0.05, -0.03])
y = F.conv2d(x.permute(0, 3, 1, 2), w.permute(3, 2, 0, 1), b, stride=2).permute(0, 2, 3, 1)
show("patch", y)

# layer norm over last axis
x = wave(8, 1.1, 0.3, 2.0).reshape(2, 4)
g = wave(4, 0.9, 1.0, 0.5) + 1.0
bb = wave(4, 0.4, 0.0, 0.3)
show("layernorm", F.layer_norm(x, (4,), g, bb, eps=1e-5))

# batch norm, training step: output and running stats (momentum 0.1)
x = wave(24, 0.61, 0.2, 1.5).reshape(2, 2, 2, 3)
g = torch.tensor([1.2, 0.8, 1.0])
bb = torch.tensor([0.1, 0.0, -0.1])
rm = torch.zeros(3)
rv = torch.ones(3)
y = F.batch_norm(x.reshape(-1, 3), rm, rv, g, bb, training=True, momentum=0.1, eps=1e-5)
show("batchnorm", y)
show("bn_running_mean", rm)
show("bn_running_var", rv)

# cross entropy
logits = wave(12, 0.8, 0.0, 2.0).reshape(3, 4)
show("xent", F.cross_entropy(logits, torch.tensor([0, 3, 1])).reshape(1))

# AdamW, three steps with gradients wave(4, 0.5, k)
p = torch.nn.Parameter(wave(4, 1.0, 0.0))
opt = torch.optim.AdamW([p], lr=0.01, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.1)
for step in range(3):
    opt.zero_grad()
    p.grad = wave(4, 0.5, float(step))
    opt.step()
show("adamw", p.detach())


# full block: D=4, B=2, 3x3 grid, shifts {1,2}
def roll(t, s):
    return torch.roll(t, shifts=-s, dims=-1)


def interact(h, c, shifts, mode):
    out = []
    for s in shifts:
        coh = h * roll(c, s)
        if mode != "inner":
            out.append(coh - c * roll(h, s))
        if mode != "wedge":
            out.append(F.silu(coh))
    return torch.cat(out, dim=-1)


def block(x, P, shifts, mode, ctx, beta):
    D = x.shape[-1]

    def dw(t, kern, bias):
        return F.conv2d(t.permute(0, 3, 1, 2), kern.unsqueeze(1), bias, padding=1, groups=D).permute(0, 2, 3, 1)

    def bn(t, gain, bias):
        flat = t.reshape(-1, D)
        return F.batch_norm(flat, None, None, gain, bias, training=True, eps=1e-5).reshape(t.shape)

    x_ln = F.layer_norm(x, (D,), P["norm.gain"], P["norm.bias"], eps=1e-5)
    z_det = x_ln @ P["det.weight"] + P["det.bias"]
    z = F.silu(bn(dw(x_ln, P["ctx1.kernel"], P["ctx1.bias"]), P["bn1.gain"], P["bn1.bias"]))
    z = F.silu(bn(dw(z, P["ctx2.kernel"], P["ctx2.bias"]), P["bn2.gain"], P["bn2.bias"]))
    z_ctx = z - z_det if ctx == "diff" else z
    g = interact(z_det, z_ctx, shifts, mode) @ P["proj.weight"] + P["proj.bias"]
    if beta:
        mean = x_ln.mean(dim=(1, 2), keepdim=True).expand_as(x_ln)
        g = g + interact(x_ln, mean, shifts, mode) @ P["glo_proj.weight"] + P["glo_proj.bias"]
    alpha = torch.sigmoid(torch.cat([x_ln, g], dim=-1) @ P["gate.weight"] + P["gate.bias"])
    return x + (F.silu(x_ln) + alpha * g) * P["gamma"]


D, shifts = 4, [1, 2]
for mode, ctx, beta in [("full", "diff", 1), ("inner", "abs", 0), ("wedge", "diff", 0)]:
    k = (2 if mode == "full" else 1) * len(shifts) * D
    shapes = [
        ("norm.gain", (D,)), ("norm.bias", (D,)), ("det.weight", (D, D)), ("det.bias", (D,)),
        ("ctx1.kernel", (D, 3, 3)), ("ctx1.bias", (D,)), ("bn1.gain", (D,)), ("bn1.bias", (D,)),
        ("ctx2.kernel", (D, 3, 3)), ("ctx2.bias", (D,)), ("bn2.gain", (D,)), ("bn2.bias", (D,)),
        ("proj.weight", (k, D)), ("proj.bias", (D,)),
    ]
    if beta:
        shapes += [("glo_proj.weight", (k, D)), ("glo_proj.bias", (D,))]
    shapes += [("gate.weight", (2 * D, D)), ("gate.bias", (D,)), ("gamma", (D,))]
    P = {}
    for idx, (name, shape) in enumerate(shapes):
        n = math.prod(shape)
        offset = 1.0 if name.endswith("gain") else (0.5 if name == "gamma" else 0.0)
        P[name] = (wave(n, 0.41, 0.9 * idx + 0.5, 0.3) + offset).reshape(shape)
    x = wave(2 * 3 * 3 * D, 0.23, 0.3, 0.8).reshape(2, 3, 3, D)
    show(f"block_{mode}_{ctx}_beta{beta}", block(x, P, shifts, mode, ctx, beta))

print("\n}  // namespace fixtures")
