"""Parameter and multiply-add counting over built models.

Costs are read from the module graph: parameters by walking the (deduplicated)
parameter set, multiply-adds by tracing one forward pass with hooks on every
convolution and linear layer. One multiply-add is one FLOP unit; batch norm,
activations, resizing and concatenation cost nothing.
"""
import json
from dataclasses import dataclass, field

import torch
from torch import nn

FLOP_CONVENTION = "1 multiply-add = 1 FLOP; BN/activation/resize counted as 0"


@dataclass
class CostReport:
    total_params: int
    total_madds: int
    input_size: int
    breakdown: dict = field(default_factory=dict)  # name -> {"params": int, "madds": int}
    shared_modules: dict = field(default_factory=dict)
    convention: str = FLOP_CONVENTION

    def to_dict(self) -> dict:
        return {
            "convention": self.convention,
            "input_size": self.input_size,
            "total_params": self.total_params,
            "total_madds": self.total_madds,
            "breakdown": self.breakdown,
            "shared_modules": self.shared_modules,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def table(self) -> str:
        lines = [f"# {self.convention}; input {self.input_size}x{self.input_size}",
                 f"{'Module':<12}{'Params':>14}{'MAdds':>18}"]
        for name, row in self.breakdown.items():
            lines.append(f"{name:<12}{row['params']:>14,}{row['madds']:>18,}")
        lines.append(f"{'Total':<12}{self.total_params:>14,}{self.total_madds:>18,}")
        lines.append(f"{'':<12}{self.total_params / 1e6:>13.2f}M{self.total_madds / 1e9:>17.3f}B")
        return "\n".join(lines)


def count_params(model: nn.Module) -> int:
    """Trainable scalars, each shared tensor counted once."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def _layer_madds(module: nn.Module, output: torch.Tensor) -> int:
    if isinstance(module, nn.Conv2d):
        per_output = module.in_channels // module.groups * module.kernel_size[0] * module.kernel_size[1]
        return output[0].numel() * per_output
    if isinstance(module, nn.Linear):
        return output[0].numel() * module.in_features
    return 0


def count_madds(model: nn.Module, input_size: int = None, per_module: bool = False, example=None):
    """Multiply-adds of one forward pass on a ``1 x 3 x S x S`` image (or ``example``)."""
    if example is None and input_size % 32:
        raise ValueError(f"input_size {input_size} is not divisible by 32")
    totals = {}
    handles = []
    names = dict(model.named_children()) or {type(model).__name__: model}
    for top, sub in names.items():
        def hook(mod, inp, out, top=top):
            totals[top] = totals.get(top, 0) + _layer_madds(mod, out)
        for m in sub.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                handles.append(m.register_forward_hook(hook))
    was_training = model.training
    model.eval()
    try:
        if example is None:
            param = next(model.parameters(), None)
            dtype = param.dtype if param is not None else torch.float32
            example = torch.zeros(1, 3, input_size, input_size, dtype=dtype)
        with torch.no_grad():
            model(example)
    finally:
        for h in handles:
            h.remove()
        model.train(was_training)
    total = sum(totals.values())
    return (total, totals) if per_module else total


def analyze(model: nn.Module, input_size: int) -> CostReport:
    total_madds, madds = count_madds(model, input_size, per_module=True)
    breakdown = {}
    seen = set()
    for name, sub in model.named_children():
        n = 0
        for p in sub.parameters():
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                n += p.numel()
        breakdown[name] = {"params": n, "madds": madds.get(name, 0)}
    shared = {}
    head = getattr(model, "head", None)
    if head is not None and hasattr(head, "assignment"):
        shared = {"mode": head.mode, "copies": len(head.heads), "assignment": dict(head.assignment)}
    return CostReport(count_params(model), total_madds, input_size, breakdown, shared)


def separable_cost_ratio(out_channels: int, in_channels: int = None, size: int = 32) -> float:
    """Standard 3x3 conv cost divided by depthwise-separable 3x3 cost, both measured."""
    from .backbone import DSConvUnit

    in_channels = in_channels or out_channels
    example = torch.zeros(1, in_channels, size, size)
    standard = nn.Conv2d(in_channels, out_channels, 3, 1, 1, bias=False)
    separable = DSConvUnit(in_channels, out_channels)
    return count_madds(standard, example=example) / count_madds(separable, example=example)
