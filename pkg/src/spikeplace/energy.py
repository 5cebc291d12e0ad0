"""Analytical inference-energy model for the spiking network and dense ANN baselines.

Energies are in picojoules internally. A *synaptic layer* is a weight layer
(convolution, depthwise-separable convolution or dense map) together with
the fire layer it drives. Spike-driven layers are costed with accumulate
operations triggered by input spikes; layers fed with real values are
costed as dense multiply-accumulates over their non-zero inputs.

Access-count conventions (per inference, per layer):

* ``n_ops = N_syn * N_spikes/syn`` with ``N_spikes/syn = theta_in / n_in``,
  i.e. every input spike reaches all synapses fanning out of its neuron.
* each synaptic event reads a weight, reads and writes a membrane state and
  performs one accumulate;
* spike memory: one read per input spike event, one write per output spike;
* per-neuron thresholds (the folded bias/batch-norm shift) are read once per
  output neuron when the layer has one;
* addressing: one address read per input spike event;
* a reset costs one add per output spike.
"""

from __future__ import annotations

import copy
import json
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .nn import BatchNorm, Conv2d, Dense, DepthwiseSeparableConv, Module, Spike

KIB = 1024
PJ_PER_MJ = 1e9
BYTES_PER_WORD = 4  # 32-bit operands throughout


@dataclass(frozen=True)
class TechConstants:
    e_add: float = 0.1
    e_mul: float = 3.1
    e_mac: float = 3.2
    e_ac: float = 0.1
    sram_anchors: tuple[tuple[int, float], ...] = ((8 * KIB, 10.0), (32 * KIB, 20.0), (1024 * KIB, 100.0))

    def __post_init__(self):
        if not np.isclose(self.e_mac, self.e_add + self.e_mul, rtol=0, atol=1e-12):
            raise ValueError("e_mac must equal e_add + e_mul")
        xs = [a[0] for a in self.sram_anchors]
        ys = [a[1] for a in self.sram_anchors]
        if len(xs) < 2 or np.any(np.diff(xs) <= 0) or np.any(np.diff(ys) <= 0):
            raise ValueError("SRAM anchors must be strictly increasing in size and energy")


def sram_energy(size_bytes: int, tech: TechConstants = TechConstants()) -> float:
    """Energy in pJ of one 32-bit access to an SRAM of ``size_bytes``.

    Piecewise-linear through the anchors, extended linearly past both ends
    and clamped at zero.
    """
    if size_bytes <= 0:
        raise ValueError("memory size must be positive")
    xs = np.array([a[0] for a in tech.sram_anchors], dtype=np.float64)
    ys = np.array([a[1] for a in tech.sram_anchors], dtype=np.float64)
    s = float(size_bytes)
    i = int(np.clip(np.searchsorted(xs, s) - 1, 0, len(xs) - 2))
    e = ys[i] + (ys[i + 1] - ys[i]) * (s - xs[i]) / (xs[i + 1] - xs[i])
    return max(0.0, float(e))


# --------------------------------------------------------------------------
# spike statistics


@dataclass
class LayerStats:
    """Per-inference averages for one synaptic layer."""

    name: str
    kind: str            # "conv", "dwsep" or "dense"
    n_in: int            # input neurons
    n_out: int           # output neurons
    n_syn: int           # synapses
    n_params: int        # stored weights (including any bias)
    theta_in: float      # input spike-equivalents (or non-zero inputs if not spiking)
    theta_out: float     # spikes emitted by the driven fire layer (0 if none)
    spiking_input: bool
    has_threshold: bool  # per-neuron bias/threshold shift to read
    zero_fraction: float = 0.0  # fraction of zero-valued inputs

    def __post_init__(self):
        for k in ("n_in", "n_out", "n_syn", "n_params", "theta_in", "theta_out"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be non-negative")

    @property
    def spikes_per_synapse(self) -> float:
        return self.theta_in / self.n_in if self.n_in else 0.0

    @property
    def n_ops(self) -> float:
        return self.n_syn * self.spikes_per_synapse

    @property
    def weight_bytes(self) -> int:
        return max(1, self.n_params) * BYTES_PER_WORD

    @property
    def state_bytes(self) -> int:
        return max(1, self.n_out) * BYTES_PER_WORD


@dataclass
class SpikeStats:
    layers: list[LayerStats]
    fire: dict[str, float]   # spikes emitted per fire layer / SEW junction, per input
    n_inputs: int

    def layer(self, name: str) -> LayerStats:
        for s in self.layers:
            if s.name == name:
                return s
        raise KeyError(name)


def _synaptic_units(model: Module) -> list[tuple[str, Module]]:
    """Weight layers in forward order; a depthwise-separable pair counts as one."""
    out = []
    skip: list[str] = []
    for name, m in model.named_modules():
        if any(name.startswith(p + ".") for p in skip):
            continue
        if isinstance(m, DepthwiseSeparableConv):
            out.append((name, m))
            skip.append(name)
        elif isinstance(m, (Conv2d, Dense)):
            out.append((name, m))
    return out


def _n_syn(unit: Module, x_shape, y_shape) -> int:
    per_in = int(np.prod(x_shape[1:]))
    if isinstance(unit, DepthwiseSeparableConv):
        ho, wo = y_shape[2], y_shape[3]
        return ho * wo * unit.out_ch * unit.in_ch * unit.kernel ** 2
    if isinstance(unit, Conv2d):
        ho, wo = y_shape[2], y_shape[3]
        return ho * wo * unit.out_ch * (unit.in_ch // unit.groups) * unit.kernel ** 2
    if isinstance(unit, Dense):
        return (per_in // unit.n_in) * unit.n_in * unit.n_out
    raise TypeError(type(unit))


def _kind(unit: Module) -> str:
    if isinstance(unit, DepthwiseSeparableConv):
        return "dwsep"
    return "conv" if isinstance(unit, Conv2d) else "dense"


@contextmanager
def _recording(units: Sequence[Module], spikes: Sequence[Module], log: dict):
    """Temporarily wrap ``forward`` on instances to accumulate activity."""

    def wrap(mod, key):
        orig = mod.forward

        def forward(x, tape=None):
            y = orig(x, tape)
            rec = log.setdefault(key, {"sum_in": 0.0, "nz_in": 0, "numel_in": 0, "sum_out": 0.0,
                                       "spiking": True, "x_shape": x.shape, "y_shape": y.shape})
            rec["sum_in"] += float(np.sum(x, dtype=np.float64))
            rec["nz_in"] += int(np.count_nonzero(x))
            rec["numel_in"] += int(x.size)
            rec["sum_out"] += float(np.sum(y, dtype=np.float64))
            if rec["spiking"]:
                rec["spiking"] = bool(np.all(x >= 0) and np.all(x == np.round(x)))
            return y

        mod.forward = forward

    mods = list(units) + list(spikes)
    for i, m in enumerate(mods):
        wrap(m, i)
    try:
        yield
    finally:
        for m in mods:
            del m.forward


def monitor_spikes(model: Module, inputs: np.ndarray, batch_size: int = 64) -> SpikeStats:
    """Run inference over ``inputs`` and average per-layer activity per input.

    Junction outputs of 2 count as two spike-equivalents.
    """
    from .arch import MixerBlock, SewBlock

    inputs = np.asarray(inputs)
    n = len(inputs)
    if n == 0:
        raise ValueError("need at least one input")
    units = _synaptic_units(model)
    order = [(name, m) for name, m in model.named_modules()]
    fire = [(name, m) for name, m in order if isinstance(m, (Spike, SewBlock, MixerBlock))]
    log: dict = {}
    was = model.training
    model.eval()
    try:
        with _recording([m for _, m in units], [m for _, m in fire], log):
            for i in range(0, n, batch_size):
                model.forward(inputs[i:i + batch_size].astype(np.float64, copy=False))
    finally:
        model.train(was)

    nu = len(units)
    fire_counts = {name: log[nu + j]["sum_out"] / n for j, (name, _) in enumerate(fire) if nu + j in log}

    # pair each unit with the first fire layer that follows it before the next unit
    positions = {id(m): k for k, (_, m) in enumerate(order)}
    unit_pos = [positions[id(m)] for _, m in units]
    layers = []
    for u, (name, unit) in enumerate(units):
        rec = log.get(u)
        if rec is None:
            raise RuntimeError(f"layer {name} was not reached during inference")
        start = unit_pos[u]
        stop = unit_pos[u + 1] if u + 1 < nu else len(order)
        between = [m for _, m in order[start + 1:stop]]
        spike = next((m for m in between if isinstance(m, Spike)), None)
        bn = any(isinstance(m, BatchNorm) for m in between)
        theta_out = 0.0
        if spike is not None:
            j = [m for _, m in fire].index(spike)
            theta_out = log[nu + j]["sum_out"] / n
        per_in = int(np.prod(rec["x_shape"][1:]))
        per_out = int(np.prod(rec["y_shape"][1:]))
        spiking = rec["spiking"]
        theta_in = rec["sum_in"] / n if spiking else rec["nz_in"] / n
        has_bias = any("bias" in m.params for _, m in unit.named_modules())
        layers.append(LayerStats(
            name=name, kind=_kind(unit), n_in=per_in, n_out=per_out,
            n_syn=_n_syn(unit, rec["x_shape"], rec["y_shape"]),
            n_params=sum(p.size for _, p in unit.named_parameters()),
            theta_in=theta_in, theta_out=theta_out, spiking_input=spiking,
            has_threshold=bn or has_bias,
            zero_fraction=1.0 - rec["nz_in"] / max(rec["numel_in"], 1),
        ))
    return SpikeStats(layers, fire_counts, n)


# --------------------------------------------------------------------------
# spiking energy


def energy_if_inst(layer: LayerStats, tech: TechConstants = TechConstants(),
                   weight_bytes: int | None = None, state_bytes: int | None = None) -> float:
    """Layer energy in pJ: ``N_syn * N_spikes/syn * (E_Rw + E_Rs + E_Ws + E_AC)``."""
    e_w = sram_energy(weight_bytes or layer.weight_bytes, tech)
    e_s = sram_energy(state_bytes or layer.state_bytes, tech)
    return layer.n_ops * (e_w + 2 * e_s + tech.e_ac)


@dataclass
class LayerEnergy:
    name: str
    e_mem_pJ: float
    e_ops_pJ: float
    e_addr_pJ: float
    if_inst_pJ: float
    mode: str  # "spiking" or "dense"

    @property
    def total_pJ(self) -> float:
        return self.e_mem_pJ + self.e_ops_pJ + self.e_addr_pJ


@dataclass
class EnergyReport:
    layers: list[LayerEnergy]
    tech: TechConstants = field(default_factory=TechConstants)

    @property
    def e_mem_pJ(self) -> float:
        return float(sum(r.e_mem_pJ for r in self.layers))

    @property
    def e_ops_pJ(self) -> float:
        return float(sum(r.e_ops_pJ for r in self.layers))

    @property
    def e_addr_pJ(self) -> float:
        return float(sum(r.e_addr_pJ for r in self.layers))

    @property
    def total_pJ(self) -> float:
        return self.e_mem_pJ + self.e_ops_pJ + self.e_addr_pJ

    @property
    def total_mJ(self) -> float:
        return self.total_pJ / PJ_PER_MJ

    def to_dict(self) -> dict:
        return {
            "layers": [
                {"name": r.name, "mode": r.mode, "e_mem_pJ": r.e_mem_pJ, "e_ops_pJ": r.e_ops_pJ,
                 "e_addr_pJ": r.e_addr_pJ, "if_inst_pJ": r.if_inst_pJ}
                for r in self.layers
            ],
            "totals_mJ": {
                "e_mem": self.e_mem_pJ / PJ_PER_MJ,
                "e_ops": self.e_ops_pJ / PJ_PER_MJ,
                "e_addr": self.e_addr_pJ / PJ_PER_MJ,
                "total": self.total_mJ,
            },
            "constants_pJ": {"e_add": self.tech.e_add, "e_mul": self.tech.e_mul,
                             "e_mac": self.tech.e_mac, "e_ac": self.tech.e_ac},
            "sram_anchors": [list(a) for a in self.tech.sram_anchors],
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def layer_energy(s: LayerStats, tech: TechConstants = TechConstants()) -> LayerEnergy:
    e_w = sram_energy(s.weight_bytes, tech)
    e_state = sram_energy(s.state_bytes, tech)
    e_spk_in = sram_energy(max(1, s.n_in) * BYTES_PER_WORD, tech)
    e_spk_out = e_state
    thr = s.n_out * e_w if s.has_threshold else 0.0
    if s.spiking_input:
        n_ops = s.n_ops
        e_mem = n_ops * (e_w + 2 * e_state) + s.theta_in * e_spk_in + s.theta_out * e_spk_out + thr
        e_ops = n_ops * tech.e_ac + s.theta_out * tech.e_add
        e_addr = s.theta_in * e_spk_in
        return LayerEnergy(s.name, e_mem, e_ops, e_addr, energy_if_inst(s, tech), "spiking")
    # real-valued input: dense MACs over the non-zero inputs
    macs = s.n_syn * (1.0 - s.zero_fraction)
    if macs == 0:
        e_mem = thr
    else:
        e_mem = macs * e_w + s.n_in * e_spk_in + s.n_out * e_spk_out + thr
    return LayerEnergy(s.name, e_mem, macs * tech.e_mac, 0.0, 0.0, "dense")


def energy_decompose(stats: SpikeStats, tech: TechConstants = TechConstants(),
                     expected: Iterable[str] | None = None) -> EnergyReport:
    """Three-part (memory, operations, addressing) breakdown for every layer."""
    if expected is not None:
        have = {s.name for s in stats.layers}
        missing = [n for n in expected if n not in have]
        if missing:
            raise KeyError(f"no spike statistics for layers: {', '.join(missing)}")
    return EnergyReport([layer_energy(s, tech) for s in stats.layers], tech)


def synaptic_layer_names(model: Module) -> list[str]:
    return [n for n, _ in _synaptic_units(model)]


# --------------------------------------------------------------------------
# dense ANN baseline


@dataclass(frozen=True)
class AnnLayerSpec:
    name: str
    n_in: int
    n_out: int
    n_syn: int
    n_params: int
    gamma: float = 0.0  # fraction of zero-valued input activations

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")


def ann_layer_energy(spec: AnnLayerSpec, tech: TechConstants = TechConstants(),
                     access_pJ: float | None = None) -> tuple[float, float]:
    """``(memory, operations)`` energy in pJ for one dense layer."""
    macs = spec.n_syn * (1.0 - spec.gamma)
    if access_pJ is None:
        e_w = sram_energy(max(1, spec.n_params) * BYTES_PER_WORD, tech)
        e_in = sram_energy(max(1, spec.n_in) * BYTES_PER_WORD, tech)
        e_out = sram_energy(max(1, spec.n_out) * BYTES_PER_WORD, tech)
    else:
        e_w = e_in = e_out = access_pJ
    mem = macs * e_w + spec.n_in * e_in + spec.n_out * e_out
    return mem, macs * tech.e_mac


def ann_energy(specs: Sequence[AnnLayerSpec], tech: TechConstants = TechConstants(),
               access_pJ: float | None = None) -> float:
    """Total pJ of a dense network: every synapse with a non-zero input costs one MAC."""
    return float(sum(sum(ann_layer_energy(s, tech, access_pJ)) for s in specs))


def ann_counterpart(stats: SpikeStats, gamma: float | Sequence[float] = 0.0) -> list[AnnLayerSpec]:
    """Same layer geometry as the spiking model, run densely with ReLU sparsity ``gamma``."""
    gammas = [float(gamma)] * len(stats.layers) if np.isscalar(gamma) else [float(g) for g in gamma]
    if len(gammas) != len(stats.layers):
        raise ValueError("one gamma per layer required")
    return [AnnLayerSpec(s.name, s.n_in, s.n_out, s.n_syn, s.n_params, g)
            for s, g in zip(stats.layers, gammas)]


def break_even_rate(weight_bytes: int, state_bytes: int, tech: TechConstants = TechConstants(),
                    gamma: float = 0.0) -> float:
    """Spikes per synapse below which a spike-driven layer beats its dense counterpart.

    Spiking cost per synapse is ``r * (E_Rw + 2 E_s + E_AC)``; dense cost is
    ``(1 - gamma) * (E_MAC + E_Rw)``. Activation traffic is ignored on both sides.
    """
    e_w = sram_energy(weight_bytes, tech)
    e_s = sram_energy(state_bytes, tech)
    return (1.0 - gamma) * (tech.e_mac + e_w) / (e_w + 2 * e_s + tech.e_ac)


def layer_geometry(model: Module, input_shape: tuple[int, ...]) -> list[LayerStats]:
    """Shapes and parameter counts of every synaptic layer, activity left at zero."""
    probe = copy.deepcopy(model)
    probe.train()
    x = np.zeros((2,) + tuple(input_shape), dtype=np.float64)
    x[1] = 1.0
    log: dict = {}
    units = _synaptic_units(probe)
    with _recording([m for _, m in units], [], log):
        probe.forward(x)
    out = []
    for u, (name, unit) in enumerate(units):
        rec = log[u]
        out.append(LayerStats(
            name=name, kind=_kind(unit),
            n_in=int(np.prod(rec["x_shape"][1:])), n_out=int(np.prod(rec["y_shape"][1:])),
            n_syn=_n_syn(unit, rec["x_shape"], rec["y_shape"]),
            n_params=sum(p.size for _, p in unit.named_parameters()),
            theta_in=0.0, theta_out=0.0, spiking_input=True, has_threshold=True,
        ))
    return out


def transfer_rates(measured: SpikeStats, model: Module, input_shape: tuple[int, ...]) -> SpikeStats:
    """Apply activity measured on one model to the geometry of another.

    The first layer keeps the measured events per input pixel; other
    spike-driven layers get the mean measured input and output rates per
    neuron. The last layer stays dense when it was dense in ``measured``.
    """
    src = measured.layers
    spk = [s for s in src[1:] if s.spiking_input]
    rate_in = float(np.mean([s.theta_in / s.n_in for s in spk])) if spk else 0.0
    fired = [s for s in spk if s.theta_out > 0]
    rate_out = float(np.mean([s.theta_out / s.n_out for s in fired])) if fired else 0.0
    zf = float(np.mean([s.zero_fraction for s in spk])) if spk else 0.0
    geo = layer_geometry(model, input_shape)
    dense_tail = bool(src) and not src[-1].spiking_input
    n_fire_free = sum(1 for s in src if s.theta_out == 0)
    layers = []
    for i, g in enumerate(geo):
        tail = i >= len(geo) - n_fire_free
        if i == 0:
            g.theta_in = src[0].theta_in / src[0].n_in * g.n_in
            g.zero_fraction = src[0].zero_fraction
        else:
            g.theta_in = rate_in * g.n_in
            g.zero_fraction = zf
        g.theta_out = 0.0 if tail else rate_out * g.n_out
        if dense_tail and i == len(geo) - 1:
            g.spiking_input = False
            g.theta_in = float(g.n_in)
            g.zero_fraction = 0.0
        layers.append(g)
    return SpikeStats(layers, {}, measured.n_inputs)


def stats_to_dict(stats: SpikeStats) -> dict:
    return {"n_inputs": stats.n_inputs, "fire": stats.fire, "layers": [asdict(s) for s in stats.layers]}
