"""The simulated distributed system.

One process plays every client and the server, but each upload is really
serialized to bytes and parsed back, so the communication meter counts
bits that exist. All randomness is cursor-addressed through the shared
streams, which makes runs bitwise reproducible and lets the server replay
each client's dither draws without transmission.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvalidParameterError
from .normal import inv_norm_cdf
from .privacy import (ClipConfig, PrivacyBudget, SigmaSchedule, clip_update,
                      median_clip_bound, sigma_fixed, sigma_schedule_dynamic)
from .quantizers import (EncodedVector, bit_width, lrq_quantize_vector,
                         lrq_reconstruct_vector, sample_layer,
                         stochastic_dequantize, stochastic_quantize_indices)
from .streams import DrawStream, SeedMaterial, element_pairs, uniform_pair_block
from .training import ModelState, Objective, local_rounds, weighted_error

FLOAT_BITS = 32


class AlgorithmKind(enum.Enum):
    """The five algorithm pipelines, with their wire tags."""

    LOCAL_SGD = 0
    GAU_SGD = 1
    QG_SGD = 2
    GAU_LRQ_SGD = 3
    DYNAMIC_GAU_LRQ_SGD = 4

    @property
    def quantized(self):
        return self in (AlgorithmKind.QG_SGD, AlgorithmKind.GAU_LRQ_SGD,
                        AlgorithmKind.DYNAMIC_GAU_LRQ_SGD)

    @property
    def private(self):
        return self is not AlgorithmKind.LOCAL_SGD

    @classmethod
    def from_name(cls, name: str) -> "AlgorithmKind":
        try:
            return cls[name.upper()]
        except KeyError:
            raise ConfigError(f"algorithm: unknown value {name!r}") from None


_HEADER = struct.Struct("<IIIBB")  # client_id, round, dim, bits_per_element, tag


@dataclass(frozen=True)
class WireMessage:
    """One client upload: fixed header plus a byte-aligned payload.

    Quantized algorithms pack two's-complement indices of the declared
    width, little-endian, LSB-first within the stream; float algorithms
    send raw little-endian float32. The stochastic quantizer additionally
    needs its per-vector scale, carried as a float32 between header and
    payload. ``payload_bits`` excludes padding, the header, and the scale.
    """

    client_id: int
    round: int
    dim: int
    bits_per_element: int
    algorithm: AlgorithmKind
    payload: bytes
    scale: float = 0.0

    @property
    def payload_bits(self) -> int:
        return self.dim * self.bits_per_element


def pack_indices(indices, bits: int) -> bytes:
    """Pack signed integers into ``bits``-wide two's-complement fields."""
    mask = (1 << bits) - 1
    word = 0
    for j, v in enumerate(np.asarray(indices, dtype=np.int64)):
        word |= (int(v) & mask) << (j * bits)
    n = len(indices) * bits
    return word.to_bytes((n + 7) // 8, "little")


def unpack_indices(payload: bytes, dim: int, bits: int, signed: bool = True) -> np.ndarray:
    """Inverse of pack_indices, with optional sign extension."""
    word = int.from_bytes(payload, "little")
    mask = (1 << bits) - 1
    sign = 1 << (bits - 1)
    out = np.empty(dim, dtype=np.int64)
    for j in range(dim):
        v = (word >> (j * bits)) & mask
        out[j] = v - (1 << bits) if signed and v & sign else v
    return out


def serialize_message(msg: WireMessage) -> bytes:
    head = _HEADER.pack(msg.client_id, msg.round, msg.dim,
                        msg.bits_per_element, msg.algorithm.value)
    if msg.algorithm.quantized:
        head += struct.pack("<f", msg.scale)
    return head + msg.payload


def parse_message(data: bytes) -> WireMessage:
    client_id, rnd, dim, bits, tag = _HEADER.unpack_from(data)
    algorithm = AlgorithmKind(tag)
    offset = _HEADER.size
    scale = 0.0
    if algorithm.quantized:
        (scale,) = struct.unpack_from("<f", data, offset)
        offset += 4
    return WireMessage(client_id=client_id, round=rnd, dim=dim,
                       bits_per_element=bits, algorithm=algorithm,
                       payload=data[offset:], scale=scale)


def sample_clients(N: int, B: int, weights, u: float) -> list[int]:
    """Systematic weighted sampling of B distinct client ids.

    ``u`` in [0, 1) positions the sampling comb. Inclusion probability is
    exactly B * p_i whenever every B * p_i <= 1; heavier clients are
    deduplicated and the gap filled with the largest-weight leftovers.
    """
    if B > N:
        raise InvalidParameterError(f"B={B} exceeds N={N}")
    if B < 1:
        raise InvalidParameterError("B must be >= 1")
    p = np.asarray(weights, dtype=np.float64)
    if p.shape != (N,) or np.any(p < 0.0) or abs(p.sum() - 1.0) > 1e-9:
        raise InvalidParameterError("weights must be N nonnegative values summing to 1")
    edges = np.cumsum(p) * B
    points = (u % 1.0) + np.arange(B)
    ids = np.searchsorted(edges, points, side="right")
    ids = np.minimum(ids, N - 1)
    chosen = sorted(set(int(i) for i in ids))
    if len(chosen) < B:
        leftovers = sorted(set(range(N)) - set(chosen),
                           key=lambda i: (-p[i], i))
        chosen = sorted(chosen + leftovers[:B - len(chosen)])
    return chosen


@dataclass
class RoundRecord:
    """Bookkeeping for one communication round (loss at round start)."""

    round: int
    clients: list[int]
    bits_sent: int
    sigma_used: float
    epsilon_spent_cumulative: float
    loss: float
    grad_sq_norm: float
    clamp_count: int
    inf_norms: list[float] = field(default_factory=list)  # clipped-update inf-norms


@dataclass
class RunTrace:
    """Full trajectory of one experiment."""

    records: list[RoundRecord]
    final_theta: np.ndarray
    summary: dict

    def to_csv(self, path, algorithm: str):
        cols = "round,algo,loss,grad_sq_norm,bits_cum,sigma,eps_cum,clamps"
        lines = [cols]
        bits_cum = 0
        for r in self.records:
            bits_cum += r.bits_sent
            lines.append(",".join([
                str(r.round), algorithm,
                format(r.loss, ".17g"), format(r.grad_sq_norm, ".17g"),
                str(bits_cum), format(r.sigma_used, ".17g"),
                format(r.epsilon_spent_cumulative, ".17g"), str(r.clamp_count),
            ]))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")

    def to_summary_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary, fh, indent=2, sort_keys=True)
            fh.write("\n")


def aggregate_and_step(decoded_updates: dict, theta: np.ndarray) -> np.ndarray:
    """theta + mean of updates, summed in ascending client-id order."""
    if not decoded_updates:
        raise InvalidParameterError("no updates to aggregate")
    ids = sorted(decoded_updates)
    dim = np.asarray(decoded_updates[ids[0]]).size
    total = np.zeros(dim, dtype=np.float64)
    for cid in ids:
        upd = np.asarray(decoded_updates[cid], dtype=np.float64)
        if upd.size != dim:
            raise InvalidParameterError("update dimension mismatch")
        total = total + upd
    return np.asarray(theta, dtype=np.float64) + total / len(ids)


class Simulation:
    """Server state plus the per-round client pipelines for one algorithm."""

    def __init__(self, algorithm: AlgorithmKind, objective: Objective,
                 theta0, seed: SeedMaterial, *, K: int, B: int, Q: int,
                 eta: float, batch_size: int, budget: PrivacyBudget | None,
                 clip: ClipConfig, tau: float = 1.0,
                 stop_on_budget: bool = False,
                 divergence_ceiling: float = 1e6):
        self.algorithm = algorithm
        self.objective = objective
        self.theta = np.asarray(theta0, dtype=np.float64).copy()
        self.theta0 = self.theta.copy()
        self.seed = seed
        self.K, self.B, self.Q = K, B, Q
        self.eta = eta
        self.batch_size = batch_size
        self.budget = budget
        self.clip = clip
        self.tau = tau
        self.stop_on_budget = stop_on_budget
        self.divergence_ceiling = divergence_ceiling
        self.N = len(objective.datasets)
        self.d = objective.dimension
        self.round = 0
        self.records: list[RoundRecord] = []
        self._eps_sq_spent = 0.0  # sum over rounds of (per-round epsilon)^2
        self._schedule = self._build_schedule()

    def _build_schedule(self) -> SigmaSchedule | None:
        if not self.algorithm.private:
            return None
        s2 = self.clip.s2 if self.clip.mode == "fixed" else 1.0
        if self.algorithm is AlgorithmKind.DYNAMIC_GAU_LRQ_SGD:
            return sigma_schedule_dynamic(s2, self.K, self.B, self.N,
                                          self.budget, self.tau)
        value = sigma_fixed(s2, self.K, self.B, self.N, self.budget)
        return SigmaSchedule(kind="fixed", sigmas=np.full(self.K, value))

    def _sigma_for_round(self, k: int, s2: float) -> float:
        # Median-adaptive clipping rescales the precomputed (S2=1) schedule
        # by the round's clip bound; fixed mode uses the schedule as built.
        base = float(self._schedule.sigmas[k])
        return base * s2 if self.clip.mode == "median_adaptive" else base

    def _gaussian_noise(self, client_id: int, k: int, sigma: float) -> np.ndarray:
        u1, _ = element_pairs(self.seed.lane("noise"), client_id, k, self.d)
        return sigma * np.asarray(inv_norm_cdf(u1))

    # -- pipelines ----------------------------------------------------------

    def _encode(self, client_id: int, k: int, update: np.ndarray,
                s2: float, sigma: float):
        """Client side; returns (message, clipped-update inf-norm, clamps)."""
        algo = self.algorithm
        if algo is AlgorithmKind.LOCAL_SGD:
            msg = WireMessage(client_id, k, self.d, FLOAT_BITS, algo,
                              update.astype("<f4").tobytes())
            return msg, 0.0, 0
        clipped = clip_update(update, s2)
        inf_norm = float(np.max(np.abs(clipped)))
        if algo is AlgorithmKind.GAU_SGD:
            noisy = clipped + self._gaussian_noise(client_id, k, sigma)
            msg = WireMessage(client_id, k, self.d, FLOAT_BITS, algo,
                              noisy.astype("<f4").tobytes())
            return msg, inf_norm, 0
        if algo is AlgorithmKind.QG_SGD:
            noisy = clipped + self._gaussian_noise(client_id, k, sigma)
            a = float(np.max(np.abs(noisy)))
            b = 1 if a == 0.0 else bit_width(-a, a, sigma)
            u = DrawStream(self.seed.lane("sq"), client_id, k).next(self.d)
            idx, scale = stochastic_quantize_indices(noisy, b, u)
            centered = idx - (1 << (b - 1))
            msg = WireMessage(client_id, k, self.d, b, algo,
                              pack_indices(centered, b), scale=scale)
            return msg, inf_norm, 0
        uniforms = element_pairs(self.seed.lane("quant"), client_id, k, self.d)
        enc = lrq_quantize_vector(clipped, sigma, uniforms,
                                  stream_tag=f"c{client_id}/r{k}")
        msg = WireMessage(client_id, k, self.d, enc.bits_per_element, algo,
                          pack_indices(enc.indices, enc.bits_per_element),
                          scale=enc.scale)
        # Report the scale the codec signed onto the wire, so the cost
        # formula reproduces the meter exactly.
        return msg, enc.scale, enc.clamp_count

    def _decode(self, msg: WireMessage, sigma: float) -> np.ndarray:
        """Server side: reconstruct one client's update from its bytes."""
        algo = msg.algorithm
        if algo in (AlgorithmKind.LOCAL_SGD, AlgorithmKind.GAU_SGD):
            return np.frombuffer(msg.payload, dtype="<f4").astype(np.float64)
        if algo is AlgorithmKind.QG_SGD:
            idx = unpack_indices(msg.payload, msg.dim, msg.bits_per_element)
            levels = idx + (1 << (msg.bits_per_element - 1))
            return stochastic_dequantize(levels, msg.bits_per_element, msg.scale)
        idx = unpack_indices(msg.payload, msg.dim, msg.bits_per_element,
                             signed=False)
        uniforms = element_pairs(self.seed.lane("quant"), msg.client_id,
                                 msg.round, msg.dim)
        enc = EncodedVector(indices=idx, dim=msg.dim,
                            bits_per_element=msg.bits_per_element,
                            scale=msg.scale)
        return lrq_reconstruct_vector(enc, sigma, uniforms)

    # -- round loop ---------------------------------------------------------

    def run_round(self) -> RoundRecord:
        if self.round >= self.K:
            raise InvalidParameterError("all configured rounds already run")
        k = self.round
        model = ModelState(theta=self.theta, round=k, objective=self.objective)
        loss = self.objective.full_loss(self.theta)
        grad = self.objective.full_gradient(self.theta)

        u_sample, _ = uniform_pair_block(self.seed.lane("sample"), 0, k, 0, 0)
        weights = np.full(self.N, 1.0 / self.N)
        clients = sample_clients(self.N, self.B, weights, float(u_sample))

        updates = {}
        for cid in clients:
            stream = DrawStream(self.seed.lane("batch"), cid, k)
            updates[cid] = local_rounds(model, self.objective.datasets[cid],
                                        self.Q, self.eta, self.batch_size,
                                        stream, self.divergence_ceiling)

        if self.algorithm.private:
            if self.clip.mode == "median_adaptive":
                s2 = median_clip_bound(
                    [float(np.linalg.norm(updates[c])) for c in clients])
                s2 = max(s2, 1e-12)
            else:
                s2 = self.clip.s2
            sigma = self._sigma_for_round(k, s2)
        else:
            s2, sigma = 0.0, 0.0

        messages = []
        clamp_count = 0
        inf_norms = []
        for cid in clients:
            msg, inf_norm, clamps = self._encode(cid, k, updates[cid], s2, sigma)
            messages.append(serialize_message(msg))
            clamp_count += clamps
            if self.algorithm.private:
                inf_norms.append(inf_norm)

        decoded = {}
        bits = 0
        for raw in messages:
            msg = parse_message(raw)
            decoded[msg.client_id] = self._decode(msg, sigma)
            bits += msg.payload_bits

        self.theta = aggregate_and_step(decoded, self.theta)

        if self.algorithm.private:
            # Lemma-4-style composition, valid per-round even when the clip
            # bound (and hence sigma) changes across rounds.
            per_round = (2.0 * s2 * np.sqrt(self.B * np.log(1.0 / self.budget.delta))
                         / (self.N * sigma))
            self._eps_sq_spent += per_round**2
            eps_cum = float(np.sqrt(self._eps_sq_spent))
        else:
            eps_cum = float("inf")

        record = RoundRecord(round=k, clients=clients, bits_sent=bits,
                             sigma_used=sigma, epsilon_spent_cumulative=eps_cum,
                             loss=loss, grad_sq_norm=float(grad @ grad),
                             clamp_count=clamp_count, inf_norms=inf_norms)
        self.records.append(record)
        self.round += 1
        return record

    def run(self) -> RunTrace:
        for _ in range(self.K):
            record = self.run_round()
            if (self.stop_on_budget and self.algorithm.private
                    and record.epsilon_spent_cumulative > self.budget.epsilon):
                break
        grad_norms = [r.grad_sq_norm for r in self.records]
        total_bits = sum(r.bits_sent for r in self.records)
        summary = {
            "algorithm": self.algorithm.name.lower(),
            "rounds_run": len(self.records),
            "weighted_error": weighted_error(grad_norms, self.tau) if grad_norms else None,
            "final_loss": self.objective.full_loss(self.theta),
            "total_bits": total_bits,
            "epsilon_spent": (self.records[-1].epsilon_spent_cumulative
                              if self.records else 0.0),
            "total_clamps": sum(r.clamp_count for r in self.records),
        }
        return RunTrace(records=self.records, final_theta=self.theta,
                        summary=summary)


def quantization_replicates(clipped_updates: dict, sigma: float,
                            seed: SeedMaterial, n_rep: int) -> np.ndarray:
    """Aggregated reconstructions over n_rep fresh quantization draws.

    Holds the participant set and their clipped updates fixed and redraws
    only the codec randomness (replicate r uses round index r of a dedicated
    lane). Returns an (n_rep, d) array of aggregated updates; indices are
    left unclamped so the result isolates the codec's own statistics.
    """
    ids = sorted(clipped_updates)
    d = np.asarray(clipped_updates[ids[0]]).size
    lane = seed.lane("replicates")
    total = np.zeros((n_rep, d))
    elem = np.tile(np.arange(d, dtype=np.uint64), n_rep)
    ctr = np.repeat(np.arange(n_rep, dtype=np.uint64), d)
    for cid in ids:
        v = np.asarray(clipped_updates[cid], dtype=np.float64)
        u1, u2 = uniform_pair_block(lane, cid, 0, elem, ctr)
        layer = sample_layer(sigma, (u1.reshape(n_rep, d), u2.reshape(n_rep, d)))
        m = np.floor((v[None, :] + layer.R - layer.x) / layer.q_step)
        total += m * layer.q_step + layer.x
    return total / len(ids)
