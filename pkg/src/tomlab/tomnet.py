"""The observer network: character net, mental net, and prediction heads.

Three character encoders cover the experiment variants:

* ``episodic``   -- 1-layer conv + conv-LSTM + pool + fc, for length-1 past
                    episodes (the random-agent experiments);
* ``trajectory`` -- per-step resnet + pool, LSTM across steps, linear, for
                    full past trajectories;
* ``snapshot``   -- per-step resnet + pool + fc, no recurrence.

Every variant encodes each past episode independently and sums the
per-episode embeddings, so the character embedding is permutation-invariant
and additive by construction, and zero when no past episodes are given.

The mental net encodes the current-episode prefix with a per-step resnet and
a convolutional LSTM, yielding a spatial embedding (zero for an empty
prefix). The prediction net concatenates the spatialised character
embedding, the mental embedding, and the query state into a residual torso
with separate heads: next-step policy, object consumptions, successor
representations (one map per discount), and optionally per-object beliefs.

Under the variational bottleneck the character fc and the mental output conv
double their width to parameterize diagonal-Gaussian posteriors; samples are
drawn with the reparameterization trick, and the KL to a unit Gaussian is
added to the loss with a quadratically annealed weight.

Batches arrive as dicts of numpy arrays; see ``harness.batches`` for the
packing contract (steps are packed flat and addressed with per-time index
arrays so recurrent compute scales with the real step count, not padding).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .gridworld import N_ACTIONS
from .nn import layers as L
from .nn import tensor as T
from .nn.tensor import Tensor


@dataclass
class ToMnetConfig:
    char_arch: str = "episodic"  # episodic | trajectory | snapshot
    e_char_dim: int = 2
    channels: int = 32
    char_conv_channels: int = 8  # episodic variant feature planes
    char_lstm_width: int = 64  # trajectory variant LSTM
    resnet_layers: int = 5
    batch_norm: bool = True
    n_planes: int = 8
    grid: int = 11
    mental: bool = False
    mental_channels: int = 32
    consumption_dim: int = 0  # 0 disables the head
    sr_gammas: tuple = ()
    belief_objects: int = 0  # 0 disables; otherwise 5 (four objects + subgoal)
    dvib: bool = False
    beta_max: float = 0.01
    beta_anneal_steps: int = 100_000

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sr_gammas"] = list(self.sr_gammas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ToMnetConfig":
        d = dict(d)
        d["sr_gammas"] = tuple(d.get("sr_gammas", ()))
        return cls(**d)


def spatialise_concat(obs: np.ndarray, action: np.ndarray) -> np.ndarray:
    """Tile each action component into a constant plane and append it.

    obs: (..., H, W, K); action: (..., 5). Returns (..., H, W, K+5).
    """
    if obs.shape[:-3] != action.shape[:-1] or action.shape[-1] != N_ACTIONS:
        raise ValueError(f"spatialise_concat: obs {obs.shape} vs action {action.shape}")
    h, w = obs.shape[-3], obs.shape[-2]
    planes = np.broadcast_to(
        action[..., None, None, :], action.shape[:-1] + (h, w, N_ACTIONS)
    )
    return np.concatenate([obs, planes], axis=-1)


def empirical_sr(flat_positions, gamma: float, n_cells: int) -> np.ndarray:
    """Normalized discounted visit counts from the query time onward."""
    if len(flat_positions) == 0:
        raise ValueError("empirical_sr needs at least one position")
    sr = np.zeros(n_cells, dtype=np.float64)
    discounts = gamma ** np.arange(len(flat_positions))
    np.add.at(sr, np.asarray(flat_positions), discounts)
    return sr / sr.sum()


def beta_schedule(step: int, total_anneal_steps: int, beta_max: float) -> float:
    """Quadratic anneal from 0 to beta_max over the given number of steps."""
    if step < 0:
        raise ValueError("step must be non-negative")
    frac = min(1.0, step / total_anneal_steps) if total_anneal_steps > 0 else 1.0
    return beta_max * frac * frac


def dvib_reparameterize(mean: Tensor, log_var: Tensor, noise: Optional[np.ndarray]):
    """Sample via the reparameterization trick and the KL to a unit Gaussian.

    ``noise`` of None uses the posterior mean (the evaluation convention).
    Returns (sample, kl) where kl sums over every dimension including batch.
    """
    if noise is None:
        sample = mean
    else:
        sample = T.add(mean, T.mul(T.exp(T.scale(log_var, 0.5)), Tensor(noise)))
    var = T.exp(log_var)
    kl_terms = T.sub(T.add(T.square(mean), var), T.add(log_var, 1.0))
    return sample, T.scale(T.sum_all(kl_terms), 0.5)


class _TimeLoop:
    """Shared gather/scatter recurrence over packed step features.

    ``time_index`` lists, for t = 0, 1, ...: (rows of the packed feature
    matrix active at t, owner indices among the n_owners sequences). Active
    sets must be prefix-shrinking (sequences are contiguous from t=0).
    """

    def __init__(self, time_index, n_owners: int):
        self.time_index = time_index
        self.n_owners = n_owners

    def run(self, feats: Tensor, cell) -> Tensor:
        # the input-side gate contribution has no recurrence: one big op on
        # the packed steps instead of one small op per time slice
        zx_all = cell.gates_from_input(feats)
        h_full = None
        h_prev = c_prev = None
        prev_owners = None
        for t, (rows, owners) in enumerate(self.time_index):
            x_t = T.gather_rows(zx_all, rows)
            if t == 0:
                h_new, c_new = cell.step_from_gates(x_t, None, None)
            else:
                if len(owners) == len(prev_owners):
                    h_act, c_act = h_prev, c_prev
                else:
                    keep = np.searchsorted(prev_owners, owners)
                    h_act = T.gather_rows(h_prev, keep)
                    c_act = T.gather_rows(c_prev, keep)
                h_new, c_new = cell.step_from_gates(x_t, h_act, c_act)
                # owners that just finished keep their final state via scatter
                done = np.setdiff1d(prev_owners, owners, assume_unique=True)
                if len(done):
                    keep_done = np.searchsorted(prev_owners, done)
                    h_full = self._merge(h_full, T.gather_rows(h_prev, keep_done), done)
            h_prev, c_prev, prev_owners = h_new, c_new, owners
        if prev_owners is not None and len(prev_owners):
            h_full = self._merge(h_full, h_prev, prev_owners)
        return h_full

    def _merge(self, h_full: Optional[Tensor], h_rows: Tensor, owners) -> Tensor:
        scattered = T.scatter_rows(h_rows, owners, self.n_owners)
        return scattered if h_full is None else T.add(h_full, scattered)


class CharEpisodicEncoder(L.Module):
    """Per-episode conv + single-step conv-LSTM + pool + fc (length-1 episodes)."""

    def __init__(self, cfg: ToMnetConfig, rng):
        c = cfg.char_conv_channels
        self.conv = L.Conv2d(cfg.n_planes + N_ACTIONS, c, rng)
        self.clstm = L.ConvLSTMCell(c, c, rng)
        out = cfg.e_char_dim * (2 if cfg.dvib else 1)
        self.fc = L.Dense(c, out, rng)

    def __call__(self, steps: Tensor, training: bool) -> Tensor:
        feats = T.relu(self.conv(steps))
        h, _ = self.clstm.step(feats, None, None)
        return self.fc(T.avg_pool_global(h))


class CharTrajectoryEncoder(L.Module):
    """Per-step resnet + pool, LSTM across the episode, linear readout."""

    def __init__(self, cfg: ToMnetConfig, rng):
        self.resnet = L.ResidualTorso(cfg.n_planes + N_ACTIONS, cfg.channels, rng,
                                      cfg.resnet_layers, cfg.batch_norm)
        self.lstm = L.LSTMCell(cfg.channels, cfg.char_lstm_width, rng)
        out = cfg.e_char_dim * (2 if cfg.dvib else 1)
        self.fc = L.Dense(cfg.char_lstm_width, out, rng)

    def __call__(self, steps: Tensor, training: bool, time_index=None, n_episodes=0) -> Tensor:
        feats = T.avg_pool_global(self.resnet(steps, training))
        loop = _TimeLoop(time_index, n_episodes)
        h_last = loop.run(feats, self.lstm)
        return self.fc(h_last)


class CharSnapshotEncoder(L.Module):
    """Per-step resnet + pool + fc; no recurrence (single-snapshot episodes)."""

    def __init__(self, cfg: ToMnetConfig, rng):
        self.resnet = L.ResidualTorso(cfg.n_planes + N_ACTIONS, cfg.channels, rng,
                                      cfg.resnet_layers, cfg.batch_norm)
        out = cfg.e_char_dim * (2 if cfg.dvib else 1)
        self.fc = L.Dense(cfg.channels, out, rng)

    def __call__(self, steps: Tensor, training: bool) -> Tensor:
        return self.fc(T.avg_pool_global(self.resnet(steps, training)))


class MentalNet(L.Module):
    """Per-step resnet + conv-LSTM over the current-episode prefix."""

    def __init__(self, cfg: ToMnetConfig, rng):
        self.resnet = L.ResidualTorso(cfg.n_planes + N_ACTIONS, cfg.mental_channels, rng,
                                      cfg.resnet_layers, cfg.batch_norm)
        self.clstm = L.ConvLSTMCell(cfg.mental_channels, cfg.mental_channels, rng)
        out = cfg.mental_channels * (2 if cfg.dvib else 1)
        self.out_conv = L.Conv2d(cfg.mental_channels, out, rng)

    def __call__(self, steps: Tensor, training: bool, time_index=None, n_samples=0) -> Tensor:
        feats = self.resnet(steps, training)
        loop = _TimeLoop(time_index, n_samples)
        h_last = loop.run(feats, self.clstm)
        return self.out_conv(h_last)


class PredictionNet(L.Module):
    def __init__(self, cfg: ToMnetConfig, rng):
        torso_in = cfg.n_planes + cfg.e_char_dim + (cfg.mental_channels if cfg.mental else 0)
        self.torso = L.ResidualTorso(torso_in, cfg.channels, rng,
                                     cfg.resnet_layers, cfg.batch_norm)
        c = cfg.channels
        self.action_conv = L.Conv2d(c, c, rng)
        self.action_fc = L.Dense(c, N_ACTIONS, rng)
        self.consumption_conv = None
        self.consumption_fc = None
        if cfg.consumption_dim:
            self.consumption_conv = L.Conv2d(c, c, rng)
            self.consumption_fc = L.Dense(c, cfg.consumption_dim, rng)
        self.sr_conv = None
        self.sr_out = None
        if cfg.sr_gammas:
            self.sr_conv = L.Conv2d(c, c, rng)
            self.sr_out = L.Conv2d(c, len(cfg.sr_gammas), rng)
        self.belief_conv = None
        self.belief_cells = None
        self.belief_absent = None
        if cfg.belief_objects:
            self.belief_conv = L.Conv2d(c, c, rng)
            self.belief_cells = L.Conv2d(c, cfg.belief_objects, rng)
            self.belief_absent = L.Dense(c, cfg.belief_objects, rng)

    def __call__(self, torso_in: Tensor, training: bool) -> dict:
        b = torso_in.shape[0]
        torso = self.torso(torso_in, training)
        out: dict = {}
        a = T.avg_pool_global(T.relu(self.action_conv(torso)))
        out["policy_logits"] = self.action_fc(a)
        out["policy_logp"] = T.log_softmax(out["policy_logits"])
        if self.consumption_conv is not None:
            h = T.avg_pool_global(T.relu(self.consumption_conv(torso)))
            out["consumption_logits"] = self.consumption_fc(h)
        if self.sr_conv is not None:
            h = self.sr_out(T.relu(self.sr_conv(torso)))  # (B, H, W, G)
            cells = T.reshape(h, (b, h.shape[1] * h.shape[2], h.shape[3]))
            out["sr_logp"] = T.log_softmax(cells, axis=1)
        if self.belief_conv is not None:
            h = T.relu(self.belief_conv(torso))
            cell_logits = self.belief_cells(h)  # (B, H, W, K)
            k = cell_logits.shape[3]
            cells = T.reshape(cell_logits, (b, cell_logits.shape[1] * cell_logits.shape[2], k))
            absent = T.reshape(self.belief_absent(T.avg_pool_global(h)), (b, 1, k))
            full = T.concat([cells, absent], axis=1)  # (B, n_cells+1, K)
            out["belief_logp"] = T.log_softmax(full, axis=1)
        return out


class ToMnet(L.Module):
    def __init__(self, cfg: ToMnetConfig, rng: np.random.Generator):
        self.cfg = cfg
        if cfg.char_arch == "episodic":
            self.char_net = CharEpisodicEncoder(cfg, rng)
        elif cfg.char_arch == "trajectory":
            self.char_net = CharTrajectoryEncoder(cfg, rng)
        elif cfg.char_arch == "snapshot":
            self.char_net = CharSnapshotEncoder(cfg, rng)
        else:
            raise ValueError(f"unknown char_arch {cfg.char_arch!r}")
        self.mental_net = MentalNet(cfg, rng) if cfg.mental else None
        self.prediction_net = PredictionNet(cfg, rng)

    # -- embeddings ---------------------------------------------------------

    def character_embed(self, batch: dict, training: bool,
                        noise: Optional[np.ndarray] = None):
        """Summed per-episode embeddings -> (e_char, kl or None)."""
        cfg = self.cfg
        b = batch["n_samples"]
        width = cfg.e_char_dim * (2 if cfg.dvib else 1)
        n_episodes = batch["char_owners"].shape[0] if batch["char_steps"] is not None else 0
        if n_episodes == 0:
            e_sum = Tensor(np.zeros((b, width), dtype=T.default_dtype()))
        else:
            steps = Tensor(batch["char_steps"])
            if cfg.char_arch == "trajectory":
                per_ep = self.char_net(steps, training,
                                       time_index=batch["char_time_index"],
                                       n_episodes=n_episodes)
            else:
                per_ep = self.char_net(steps, training)
            seg = Tensor(batch["char_segment"])  # (B, E) 0/1 owner matrix
            e_sum = T.matmul(seg, per_ep)
        if not cfg.dvib:
            return e_sum, None
        mean = T.slice_last(e_sum, 0, cfg.e_char_dim)
        log_var = T.slice_last(e_sum, cfg.e_char_dim, 2 * cfg.e_char_dim)
        return dvib_reparameterize(mean, log_var, noise if training else None)

    def mental_embed(self, batch: dict, training: bool,
                     noise: Optional[np.ndarray] = None):
        cfg = self.cfg
        b = batch["n_samples"]
        g = cfg.grid
        width = cfg.mental_channels * (2 if cfg.dvib else 1)
        if batch["mental_steps"] is None or batch["mental_steps"].shape[0] == 0:
            raw = Tensor(np.zeros((b, g, g, width), dtype=T.default_dtype()))
        else:
            steps = Tensor(batch["mental_steps"])
            raw = self.mental_net(steps, training,
                                  time_index=batch["mental_time_index"], n_samples=b)
            # samples with an empty prefix must embed to exactly zero
            raw = T.mul(raw, Tensor(batch["mental_nonempty"].reshape(b, 1, 1, 1)))
        if not cfg.dvib:
            return raw, None
        mean = T.slice_last(raw, 0, cfg.mental_channels)
        log_var = T.slice_last(raw, cfg.mental_channels, 2 * cfg.mental_channels)
        return dvib_reparameterize(mean, log_var, noise if training else None)

    # -- full forward -------------------------------------------------------

    def forward(self, batch: dict, training: bool,
                rng: Optional[np.random.Generator] = None) -> dict:
        cfg = self.cfg
        b = batch["n_samples"]
        noise_c = noise_m = None
        if cfg.dvib and training:
            if rng is None:
                raise ValueError("dvib training forward needs an rng for noise")
            noise_c = rng.standard_normal((b, cfg.e_char_dim)).astype(T.default_dtype())
            if cfg.mental:
                noise_m = rng.standard_normal(
                    (b, cfg.grid, cfg.grid, cfg.mental_channels)
                ).astype(T.default_dtype())
        e_char, kl_char = self.character_embed(batch, training, noise_c)
        parts = [Tensor(batch["query"]), T.spatial_tile(e_char, cfg.grid, cfg.grid)]
        kl_mental = None
        e_mental = None
        if cfg.mental:
            e_mental, kl_mental = self.mental_embed(batch, training, noise_m)
            parts.append(e_mental)
        torso_in = T.concat(parts, axis=-1)
        out = self.prediction_net(torso_in, training)
        out["e_char"] = e_char
        if e_mental is not None:
            out["e_mental"] = e_mental
        if kl_char is not None:
            out["kl_char"] = kl_char
        if kl_mental is not None:
            out["kl_mental"] = kl_mental
        return out

    def loss(self, out: dict, batch: dict, beta: float = 0.0):
        """Equal-weighted sum of the per-head losses, averaged over the batch."""
        cfg = self.cfg
        b = batch["n_samples"]
        comps: dict = {}
        onehot = np.zeros((b, N_ACTIONS), dtype=T.default_dtype())
        onehot[np.arange(b), batch["action"]] = 1.0
        l_action = T.scale(T.sum_all(T.mul(out["policy_logp"], Tensor(onehot))), -1.0 / b)
        total = l_action
        comps["action"] = float(l_action.data)
        if cfg.consumption_dim:
            x = out["consumption_logits"]
            c = Tensor(batch["consumption"].astype(T.default_dtype()))
            l_cons = T.scale(T.sum_all(T.sub(T.softplus(x), T.mul(c, x))), 1.0 / b)
            total = T.add(total, l_cons)
            comps["consumption"] = float(l_cons.data)
        if cfg.sr_gammas:
            target = Tensor(batch["sr"].astype(T.default_dtype()))  # (B, cells, G)
            l_sr = T.scale(T.sum_all(T.mul(target, out["sr_logp"])), -1.0 / b)
            total = T.add(total, l_sr)
            comps["sr"] = float(l_sr.data)
        if cfg.belief_objects:
            target = Tensor(batch["belief"].astype(T.default_dtype()))  # (B, cells+1, K)
            l_bel = T.scale(T.sum_all(T.mul(target, out["belief_logp"])), -1.0 / b)
            total = T.add(total, l_bel)
            comps["belief"] = float(l_bel.data)
        if cfg.dvib and "kl_char" in out:
            kl = out["kl_char"]
            if "kl_mental" in out:
                kl = T.add(kl, out["kl_mental"])
            l_kl = T.scale(kl, beta / b)
            total = T.add(total, l_kl)
            comps["kl"] = float(kl.data) / b
        comps["total"] = float(total.data)
        return total, comps

    # -- persistence ----------------------------------------------------------

    def state_arrays(self) -> dict:
        arrays = {name: p.data for name, p in self.named_parameters()}
        for name, buf in self.named_buffers():
            arrays["buffer." + name] = buf
        return arrays

    def save(self, path, meta: Optional[dict] = None) -> None:
        from .nn.checkpoint import save_checkpoint

        full_meta = {"config": self.cfg.to_dict(), "dtype": str(T.default_dtype().__name__)}
        full_meta.update(meta or {})
        save_checkpoint(path, self.state_arrays(), full_meta)

    @classmethod
    def load(cls, path) -> tuple["ToMnet", dict]:
        from .nn.checkpoint import load_checkpoint

        arrays, meta = load_checkpoint(path)
        cfg = ToMnetConfig.from_dict(meta["config"])
        if "dtype" in meta:  # rebuild under the dtype the model was trained with
            T.set_default_dtype(np.float32 if meta["dtype"] == "float32" else np.float64)
        model = cls(cfg, np.random.default_rng(0))
        for name, p in model.named_parameters():
            src = arrays[name]
            if tuple(src.shape) != tuple(p.data.shape):
                raise ValueError(f"checkpoint shape mismatch for {name}")
            p.data = src.astype(p.data.dtype, copy=True)
        for name, buf in model.named_buffers():
            src = arrays["buffer." + name]
            buf[...] = src
        return model, meta
