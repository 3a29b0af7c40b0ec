"""Spatiotemporal attention LSTM encoder-decoder over a road network.

The encoder consumes the last l_in (node, direction) tokens of a
trajectory; the decoder emits a distribution over the K direction labels
for each of the next l_out steps. Three attention pieces sit around the
stacked LSTMs:

* a local graph attention over each node's out-neighbors, conditioned on
  the incoming direction, producing a spatial context vector per token;
* a sliding temporal attention over the last l_in hidden states (encoder
  outputs first, then already-decoded steps) producing a temporal
  context vector per decode step;
* an output head that concatenates the top hidden state with embedded
  time-of-week, weather and driver features before the softmax.

Everything runs batched with shape (batch, dim); prediction is just a
batch of one, so training and inference share one forward
implementation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .codec import ContextFeatures
from .errors import ConfigError, DataError

VARIANTS = ("full", "FSA", "no-SA", "FTA", "no-TA", "no-DTR")

ATTENTION_MASK = -1e30


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    Variants:
      full   - everything on
      FSA    - spatial attention scores ignore the incoming direction
               (fixed per-node weights)
      no-SA  - spatial context replaced by zeros
      FTA    - temporal attention always over the encoder outputs instead
               of a sliding window
      no-TA  - no temporal context; decoder input shrinks accordingly
      no-DTR - token streams are raw node ids: no direction embeddings
               and the output head classifies the next node over the
               whole node vocabulary
    """

    node_vocab: int
    driver_vocab: int = 1
    K: int = 8
    M: int = 256
    D: int = 256
    B: int = 512
    S: int = 2
    Q_time: int = 32
    Q_weather: int = 32
    Q_individual: int = 32
    l_in: int = 10
    l_out: int = 5
    variant: str = "full"

    def validate(self):
        for name in ("node_vocab", "driver_vocab", "K", "M", "D", "B", "S",
                     "Q_time", "Q_weather", "Q_individual", "l_in", "l_out"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; pick one of {VARIANTS}")
        return self

    # variant switches
    @property
    def uses_direction_tokens(self):
        return self.variant != "no-DTR"

    @property
    def uses_spatial(self):
        return self.variant != "no-SA"

    @property
    def spatial_uses_direction(self):
        return self.uses_spatial and self.uses_direction_tokens and self.variant != "FSA"

    @property
    def uses_temporal(self):
        return self.variant != "no-TA"

    @property
    def temporal_sliding(self):
        return self.uses_temporal and self.variant != "FTA"

    @property
    def node_targets(self):
        return self.variant == "no-DTR"

    # shape contract
    @property
    def token_dim(self):
        base = 2 * self.M  # node embedding plus spatial context
        if self.uses_direction_tokens:
            base += self.D
        return base

    @property
    def encoder_input_dim(self):
        return self.token_dim

    @property
    def decoder_input_dim(self):
        return self.token_dim + (self.B if self.uses_temporal else 0)

    @property
    def head_input_dim(self):
        return self.B + self.Q_time + self.Q_weather + self.Q_individual

    @property
    def target_vocab(self):
        return self.node_vocab if self.node_targets else self.K

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d).validate()


@dataclass
class SpatialAttnOut:
    context: np.ndarray          # (M,)
    weights: list                # [(neighbor node id, weight), ...]
    isolated: bool = False


@dataclass
class TemporalAttnOut:
    context: np.ndarray          # (B,)
    weights: np.ndarray          # (l_in,)


@dataclass
class PredictionResult:
    """Greedy decode output plus attention dumps.

    `directions` holds the predicted labels (node ids for no-DTR models).
    `edge_ids` may be shorter than `directions` when unmasked decoding
    predicted a label with no matching edge; `stopped_at` then names the
    1-based failing step.
    """

    directions: list
    edge_ids: list
    nodes: list
    stopped_at: int | None = None
    stop_reason: str | None = None
    spatial_attention: list = field(default_factory=list)
    temporal_attention: np.ndarray | None = None


def init_params(config, rng, dtype=np.float32):
    """Create all parameters, uniform in [-0.1, 0.1], in a fixed order."""
    cfg = config
    store = ParamStore(dtype=dtype)
    store.create("node_embed", (cfg.node_vocab, cfg.M), rng)
    if cfg.uses_direction_tokens:
        store.create("dir_embed", (cfg.K, cfg.D), rng)
    store.create("time_embed", (ContextFeatures.TIME_SLOTS, cfg.Q_time), rng)
    store.create("weather_embed", (ContextFeatures.WEATHER_KINDS, cfg.Q_weather), rng)
    store.create("driver_embed", (cfg.driver_vocab, cfg.Q_individual), rng)
    if cfg.uses_spatial:
        store.create("spatial_w_self", (cfg.M, 1), rng)
        store.create("spatial_w_neighbor", (cfg.M, 1), rng)
        if cfg.spatial_uses_direction:
            store.create("spatial_w_dir", (cfg.D, 1), rng)
    in_dim = cfg.encoder_input_dim
    for layer in range(cfg.S):
        store.create(f"enc_lstm_w_{layer}", (in_dim + cfg.B, 4 * cfg.B), rng)
        store.create(f"enc_lstm_b_{layer}", (1, 4 * cfg.B), rng)
        in_dim = cfg.B
    in_dim = cfg.decoder_input_dim
    for layer in range(cfg.S):
        store.create(f"dec_lstm_w_{layer}", (in_dim + cfg.B, 4 * cfg.B), rng)
        store.create(f"dec_lstm_b_{layer}", (1, 4 * cfg.B), rng)
        in_dim = cfg.B
    if cfg.uses_temporal:
        store.create("temporal_w_state", (2 * cfg.S * cfg.B, 1), rng)
        store.create("temporal_w_ctx", (cfg.B, 1), rng)
    store.create("out_w", (cfg.head_input_dim, cfg.target_vocab), rng)
    return store


class TrajectoryModel:
    """Binds a config, a labeled road network and a parameter store."""

    def __init__(self, config, net, params):
        config.validate()
        if config.node_vocab != len(net.nodes):
            raise ConfigError(
                f"node_vocab {config.node_vocab} != network node count {len(net.nodes)}"
            )
        if net.num_directions is None or net._dir_index is None:
            raise ConfigError("network must be labeled (assign_intervals + resolve_conflicts)")
        if config.uses_direction_tokens and net.num_directions != config.K:
            raise ConfigError(
                f"K={config.K} does not match network direction count {net.num_directions}"
            )
        self.config = config
        self.net = net
        self.params = params
        self.dtype = params.dtype

        # vocab index = rank of node id, robust to file row order
        self._node_ids = np.array(sorted(net.node_by_id), dtype=np.int64)
        self._node_index = {nid: i for i, nid in enumerate(self._node_ids)}

        n = len(self._node_ids)
        self._neighbors_vocab = [None] * n
        self._neighbors_ids = [None] * n
        self._dir_edges = [None] * n      # label -> (edge id, target vocab idx)
        self._pair_edges = [None] * n     # target vocab idx -> edge id (lowest)
        for i, nid in enumerate(self._node_ids):
            nb_ids = net.neighbors(nid)
            self._neighbors_ids[i] = nb_ids
            self._neighbors_vocab[i] = np.array(
                [self._node_index[t] for t in nb_ids], dtype=np.int64
            )
            by_dir = {}
            by_pair = {}
            for e in net.out_edges(nid):
                by_dir[e.direction] = (e.id, self._node_index[e.target])
                by_pair.setdefault(self._node_index[e.target], e.id)
            self._dir_edges[i] = by_dir
            self._pair_edges[i] = by_pair

    @classmethod
    def initialize(cls, config, net, seed_or_rng=0, dtype=np.float32):
        rng = seed_or_rng
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(seed_or_rng)
        params = init_params(config, rng, dtype=dtype)
        return cls(config, net, params)

    def with_params(self, params):
        return TrajectoryModel(self.config, self.net, params)

    # ------------------------------------------------------------------
    # id / index helpers

    def node_index(self, node_id):
        try:
            return self._node_index[node_id]
        except KeyError:
            raise DataError(f"unknown node id {node_id}") from None

    def node_id(self, index):
        return int(self._node_ids[index])

    def _const(self, arr):
        return Tensor(np.asarray(arr, dtype=self.dtype))

    def _zero_states(self, batch):
        z = np.zeros((batch, self.config.B), dtype=self.dtype)
        return [(self._const(z), self._const(z)) for _ in range(self.config.S)]

    # ------------------------------------------------------------------
    # forward pieces (batched; batch of one for prediction)

    def _context_vectors(self, time_slot, weather, driver):
        cfg = self.config
        driver = np.asarray(driver, dtype=np.int64)
        # unseen drivers share the reserved embedding at index 0
        driver = np.where(driver >= cfg.driver_vocab, 0, driver)
        v_time = ad.row_lookup(self.params["time_embed"], np.asarray(time_slot))
        v_weather = ad.row_lookup(self.params["weather_embed"], np.asarray(weather))
        v_driver = ad.row_lookup(self.params["driver_embed"], driver)
        return v_time, v_weather, v_driver

    def _spatial_context(self, node_idx, dir_labels, collect=False):
        """Spatial context vectors for a batch of (node, incoming direction).

        Scores each out-neighbor with a shared linear map over
        [self embedding; neighbor embedding; direction embedding],
        softmax-normalizes over the actual neighbors, and returns the
        weighted sum of neighbor embeddings. Nodes without out-neighbors
        get a zero context and an empty weight list.
        """
        cfg = self.config
        b = len(node_idx)
        if not cfg.uses_spatial:
            return self._const(np.zeros((b, cfg.M))), ([None] * b if collect else None)

        nb_lists = [self._neighbors_vocab[i] for i in node_idx]
        counts = [len(x) for x in nb_lists]
        max_nb = max(max(counts), 1)
        idx_mat = np.zeros((b, max_nb), dtype=np.int64)
        mask = np.zeros((b, max_nb), dtype=self.dtype)
        occupied = np.zeros((b, 1), dtype=self.dtype)
        for i, lst in enumerate(nb_lists):
            k = len(lst)
            if k:
                idx_mat[i, :k] = lst
                occupied[i, 0] = 1.0
            if k < max_nb:
                mask[i, k:] = ATTENTION_MASK

        v_self = ad.row_lookup(self.params["node_embed"], np.asarray(node_idx))
        base = ad.matmul(v_self, self.params["spatial_w_self"])
        if cfg.spatial_uses_direction:
            v_dir = ad.row_lookup(self.params["dir_embed"], np.asarray(dir_labels))
            base = ad.add(base, ad.matmul(v_dir, self.params["spatial_w_dir"]))

        slot_vs = []
        slot_scores = []
        for t in range(max_nb):
            v_t = ad.row_lookup(self.params["node_embed"], idx_mat[:, t])
            slot_vs.append(v_t)
            slot_scores.append(ad.matmul(v_t, self.params["spatial_w_neighbor"]))
        scores = slot_scores[0] if max_nb == 1 else ad.concat(slot_scores)
        # the nonlinearity keeps the shared self/direction terms from
        # cancelling inside the softmax (the usual graph-attention trick)
        scores = ad.leaky_relu(ad.add(scores, base))
        if mask.any():
            scores = ad.add(scores, self._const(mask))
        weights = ad.softmax(scores)

        ctx = None
        for t in range(max_nb):
            term = ad.mul(ad.slice_cols(weights, t, t + 1), slot_vs[t])
            ctx = term if ctx is None else ad.add(ctx, term)
        if not occupied.all():
            ctx = ad.mul(ctx, self._const(occupied))

        dumps = None
        if collect:
            dumps = []
            wdata = weights.data
            for i in range(b):
                pairs = [
                    (self._neighbors_ids[node_idx[i]][t], float(wdata[i, t]))
                    for t in range(counts[i])
                ]
                dumps.append(pairs)
        return ctx, dumps

    def _token_input(self, node_idx, dir_labels, u=None, collect=False):
        parts = [ad.row_lookup(self.params["node_embed"], np.asarray(node_idx))]
        if self.config.uses_direction_tokens:
            parts.append(ad.row_lookup(self.params["dir_embed"], np.asarray(dir_labels)))
        ctx, dumps = self._spatial_context(node_idx, dir_labels, collect=collect)
        parts.append(ctx)
        if u is not None:
            parts.append(u)
        return ad.concat(parts), dumps

    def _lstm_step(self, prefix, layer, x, h, c):
        cfg = self.config
        z = ad.add(
            ad.matmul(ad.concat([x, h]), self.params[f"{prefix}_lstm_w_{layer}"]),
            self.params[f"{prefix}_lstm_b_{layer}"],
        )
        B = cfg.B
        gate_i = ad.sigmoid(ad.slice_cols(z, 0, B))
        gate_f = ad.sigmoid(ad.slice_cols(z, B, 2 * B))
        gate_g = ad.tanh(ad.slice_cols(z, 2 * B, 3 * B))
        gate_o = ad.sigmoid(ad.slice_cols(z, 3 * B, 4 * B))
        c_new = ad.add(ad.mul(gate_f, c), ad.mul(gate_i, gate_g))
        h_new = ad.mul(gate_o, ad.tanh(c_new))
        return h_new, c_new

    def _run_stack(self, prefix, x, states, train=False, dropout_p=0.0, rng=None):
        """One time step through all stacked layers; dropout between layers."""
        new_states = []
        inp = x
        top = None
        for layer in range(self.config.S):
            h, c = states[layer]
            h_new, c_new = self._lstm_step(prefix, layer, inp, h, c)
            new_states.append((h_new, c_new))
            top = h_new
            inp = h_new
            if layer < self.config.S - 1:
                inp = ad.dropout(inp, dropout_p, train, rng)
        return top, new_states

    def _encode(self, in_nodes, in_dirs, train=False, dropout_p=0.0, rng=None,
                collect=False):
        cfg = self.config
        b, length = in_nodes.shape
        if length != cfg.l_in:
            raise DataError(f"input window length {length} != l_in {cfg.l_in}")
        states = self._zero_states(b)
        H = []
        dumps = [] if collect else None
        for t in range(cfg.l_in):
            dirs_t = in_dirs[:, t] if in_dirs is not None else None
            x, dump = self._token_input(in_nodes[:, t], dirs_t, collect=collect)
            top, states = self._run_stack("enc", x, states, train, dropout_p, rng)
            H.append(top)
            if collect:
                dumps.append(dump)
        return H, states, dumps

    def _temporal_context(self, dec_states, window):
        """Temporal context from the previous decoder state over a window.

        Score for window slot j is [h; c over all layers; window_j] through
        a shared linear map, softmax over the l_in slots.
        """
        state_vec = ad.concat(
            [h for h, _ in dec_states] + [c for _, c in dec_states]
        )
        base = ad.matmul(state_vec, self.params["temporal_w_state"])
        cols = [ad.matmul(hj, self.params["temporal_w_ctx"]) for hj in window]
        scores = cols[0] if len(cols) == 1 else ad.concat(cols)
        # same nonlinearity as the spatial scores, so the decoder-state
        # term survives the softmax normalization
        scores = ad.leaky_relu(ad.add(scores, base))
        z = ad.softmax(scores)
        u = None
        for j, hj in enumerate(window):
            term = ad.mul(ad.slice_cols(z, j, j + 1), hj)
            u = term if u is None else ad.add(u, term)
        return u, z.data

    def _output_step(self, top_h, ctx_vecs):
        feats = ad.concat([top_h, *ctx_vecs])
        return ad.softmax(ad.matmul(feats, self.params["out_w"]))

    # ------------------------------------------------------------------
    # feedback resolution (greedy argmax with validity handling)

    def _choose_direction(self, node_idx, prob_row, masked):
        """Greedy label at a node. Returns (label, edge_id or None, target_idx
        or None, reason or None)."""
        avail = self._dir_edges[node_idx]
        if masked:
            if not avail:
                return None, None, None, "dead-end"
            best = None
            for label in sorted(avail):
                if best is None or prob_row[label] > prob_row[best]:
                    best = label
            eid, tgt = avail[best]
            return best, eid, tgt, None
        label = int(np.argmax(prob_row))
        if label in avail:
            eid, tgt = avail[label]
            return label, eid, tgt, None
        return label, None, None, "invalid-direction"

    def _choose_node(self, node_idx, prob_row, masked):
        """no-DTR counterpart: greedy next node."""
        pairs = self._pair_edges[node_idx]
        if masked:
            if not pairs:
                return None, None, None, "dead-end"
            best = None
            for tgt in sorted(pairs):
                if best is None or prob_row[tgt] > prob_row[best]:
                    best = tgt
            return best, pairs[best], best, None
        tgt = int(np.argmax(prob_row))
        if tgt in pairs:
            return tgt, pairs[tgt], tgt, None
        return tgt, None, None, "invalid-direction"

    # ------------------------------------------------------------------
    # training forward

    def prepare_batch(self, samples):
        """Pack TrainSample-like objects into index arrays."""
        cfg = self.config
        b = len(samples)
        in_nodes = np.zeros((b, cfg.l_in), dtype=np.int64)
        in_dirs = np.zeros((b, cfg.l_in), dtype=np.int64)
        tgt_nodes = np.zeros((b, cfg.l_out), dtype=np.int64)
        tgt_dirs = np.zeros((b, cfg.l_out), dtype=np.int64)
        time_slot = np.zeros(b, dtype=np.int64)
        weather = np.zeros(b, dtype=np.int64)
        driver = np.zeros(b, dtype=np.int64)
        for i, s in enumerate(samples):
            if len(s.input_nodes) != cfg.l_in or len(s.target_nodes) != cfg.l_out:
                raise DataError(
                    f"sample window ({len(s.input_nodes)}, {len(s.target_nodes)}) "
                    f"does not match (l_in={cfg.l_in}, l_out={cfg.l_out})"
                )
            in_nodes[i] = [self.node_index(n) for n in s.input_nodes]
            in_dirs[i] = s.input_dirs
            tgt_nodes[i] = [self.node_index(n) for n in s.target_nodes]
            tgt_dirs[i] = s.target_dirs
            time_slot[i] = s.context.time_slot
            weather[i] = s.context.weather
            driver[i] = s.context.driver_id
        targets = tgt_nodes if cfg.node_targets else tgt_dirs
        return {
            "in_nodes": in_nodes,
            "in_dirs": in_dirs if cfg.uses_direction_tokens else None,
            "tgt_nodes": tgt_nodes,
            "tgt_dirs": tgt_dirs,
            "targets": targets,
            "time_slot": time_slot,
            "weather": weather,
            "driver": driver,
        }

    def training_loss(self, batch, alpha=1.0, dropout_p=0.0, rng=None, counters=None):
        """Scheduled-sampling forward pass over one batch.

        Targets are always the ground-truth labels; `alpha` only controls
        whether each decoder input token is the ground truth (probability
        alpha) or the model's own previous greedy prediction. Returns the
        scalar mean loss (per-sample cross entropy summed over the l_out
        positions) and the per-sample loss vector.
        """
        cfg = self.config
        in_nodes = batch["in_nodes"]
        b = in_nodes.shape[0]
        ctx_vecs = self._context_vectors(
            batch["time_slot"], batch["weather"], batch["driver"]
        )
        H_enc, states, _ = self._encode(
            in_nodes, batch["in_dirs"], train=True, dropout_p=dropout_p, rng=rng
        )
        window = list(H_enc)
        cur_nodes = in_nodes[:, -1].copy()
        cur_dirs = batch["in_dirs"][:, -1].copy() if batch["in_dirs"] is not None else None
        targets = batch["targets"]

        loss_acc = None
        for i in range(cfg.l_out):
            u = None
            if cfg.uses_temporal:
                view = window[-cfg.l_in:] if cfg.temporal_sliding else H_enc
                u, _ = self._temporal_context(states, view)
            x, _ = self._token_input(cur_nodes, cur_dirs, u=u)
            top, states = self._run_stack("dec", x, states, True, dropout_p, rng)
            probs = self._output_step(top, ctx_vecs)
            ce = ad.cross_entropy(probs, targets[:, i])
            loss_acc = ce if loss_acc is None else ad.add(loss_acc, ce)
            window.append(top)

            if i == cfg.l_out - 1:
                break
            if alpha >= 1.0:
                teacher = np.ones(b, dtype=bool)
            elif alpha <= 0.0:
                teacher = np.zeros(b, dtype=bool)
            else:
                teacher = rng.random(b) < alpha
            next_nodes = batch["tgt_nodes"][:, i].copy()
            next_dirs = batch["tgt_dirs"][:, i].copy()
            n_fallback = 0
            prob_data = probs.data
            for row in np.flatnonzero(~teacher):
                node = int(cur_nodes[row])
                if cfg.node_targets:
                    label, eid, tgt, reason = self._choose_node(node, prob_data[row], True)
                else:
                    raw = int(np.argmax(prob_data[row]))
                    if raw in self._dir_edges[node]:
                        label = raw
                        eid, tgt = self._dir_edges[node][raw]
                        reason = None
                    else:
                        # invalid greedy pick: fall back to the masked argmax
                        label, eid, tgt, reason = self._choose_direction(
                            node, prob_data[row], True
                        )
                        n_fallback += 1
                if reason == "dead-end":
                    # nowhere to go; keep the ground truth token
                    continue
                next_nodes[row] = tgt
                if not cfg.node_targets:
                    next_dirs[row] = label
            if counters is not None:
                counters["teacher_steps"] = counters.get("teacher_steps", 0) + int(teacher.sum())
                counters["sampled_steps"] = counters.get("sampled_steps", 0) + int((~teacher).sum())
                counters["fallback_steps"] = counters.get("fallback_steps", 0) + n_fallback
            cur_nodes = next_nodes
            if cur_dirs is not None:
                cur_dirs = next_dirs

        loss = ad.tmean(loss_acc)
        return loss, loss_acc.data.copy()

    # ------------------------------------------------------------------
    # greedy prediction

    def predict(self, input_nodes, input_dirs, context, masked=True,
                collect_attention=False):
        """Greedy l_out-step decode of one input window.

        `input_nodes`/`input_dirs` are node ids and direction labels of
        the l_in most recent tokens. With `masked=True` the argmax is
        restricted to labels with an existing outgoing edge at the
        current node, so decoding never picks a nonexistent edge.
        """
        cfg = self.config
        if len(input_nodes) != cfg.l_in:
            raise DataError(f"input window length {len(input_nodes)} != l_in {cfg.l_in}")
        if cfg.uses_direction_tokens and len(input_dirs) != cfg.l_in:
            raise DataError("input_dirs length does not match l_in")
        with ad.no_grad():
            in_nodes = np.array([[self.node_index(n) for n in input_nodes]], dtype=np.int64)
            in_dirs = None
            if cfg.uses_direction_tokens:
                in_dirs = np.array([list(input_dirs)], dtype=np.int64)
            ctx = context if context is not None else ContextFeatures()
            ctx_vecs = self._context_vectors(
                np.array([ctx.time_slot]), np.array([ctx.weather]), np.array([ctx.driver_id])
            )
            H_enc, states, enc_dumps = self._encode(
                in_nodes, in_dirs, collect=collect_attention
            )
            window = list(H_enc)
            cur_node = int(in_nodes[0, -1])
            cur_dir = int(in_dirs[0, -1]) if in_dirs is not None else None

            result = PredictionResult(
                directions=[], edge_ids=[], nodes=[self.node_id(cur_node)]
            )
            if collect_attention:
                for t, dump in enumerate(enc_dumps):
                    if dump is not None and dump[0] is not None:
                        result.spatial_attention.append(
                            ("encoder", t + 1, self.node_id(int(in_nodes[0, t])), dump[0])
                        )
            temporal_rows = []

            for i in range(1, cfg.l_out + 1):
                u = None
                if cfg.uses_temporal:
                    view = window[-cfg.l_in:] if cfg.temporal_sliding else H_enc
                    u, zdata = self._temporal_context(states, view)
                    temporal_rows.append(zdata[0].copy())
                feed_dirs = None if cur_dir is None else np.array([cur_dir])
                x, dump = self._token_input(
                    np.array([cur_node]), feed_dirs, u=u, collect=collect_attention
                )
                if collect_attention and dump is not None and dump[0] is not None:
                    result.spatial_attention.append(
                        ("decoder", i, self.node_id(cur_node), dump[0])
                    )
                top, states = self._run_stack("dec", x, states)
                probs = self._output_step(top, ctx_vecs)
                row = probs.data[0]
                if cfg.node_targets:
                    label, eid, tgt, reason = self._choose_node(cur_node, row, masked)
                else:
                    label, eid, tgt, reason = self._choose_direction(cur_node, row, masked)
                if reason == "dead-end":
                    result.stopped_at = i
                    result.stop_reason = reason
                    break
                result.directions.append(
                    self.node_id(label) if cfg.node_targets else label
                )
                if eid is None:
                    result.stopped_at = i
                    result.stop_reason = reason
                    break
                result.edge_ids.append(eid)
                result.nodes.append(self.node_id(tgt))
                cur_node = tgt
                if cur_dir is not None:
                    cur_dir = label
                window.append(top)

            if collect_attention and temporal_rows:
                result.temporal_attention = np.vstack(temporal_rows)
            return result

    # ------------------------------------------------------------------
    # single-sample views of the forward pieces (mainly for tests/tools)

    def embed(self, node_id, direction, ctx):
        """Embedding rows for one token: pure table lookups."""
        cfg = self.config
        with ad.no_grad():
            out = {
                "node": ad.row_lookup(
                    self.params["node_embed"], np.array([self.node_index(node_id)])
                ).data[0].copy()
            }
            if cfg.uses_direction_tokens:
                if not 0 <= direction < cfg.K:
                    raise DataError(f"direction {direction} outside [0, {cfg.K})")
                out["direction"] = ad.row_lookup(
                    self.params["dir_embed"], np.array([direction])
                ).data[0].copy()
            v_time, v_weather, v_driver = self._context_vectors(
                np.array([ctx.time_slot]), np.array([ctx.weather]), np.array([ctx.driver_id])
            )
            out["time"] = v_time.data[0].copy()
            out["weather"] = v_weather.data[0].copy()
            out["driver"] = v_driver.data[0].copy()
            return out

    def spatial_attention(self, node_id, direction):
        """SpatialAttnOut for a single (node, incoming direction)."""
        with ad.no_grad():
            idx = self.node_index(node_id)
            dirs = None
            if self.config.spatial_uses_direction:
                dirs = np.array([direction])
            ctx, dumps = self._spatial_context([idx], dirs, collect=True)
            pairs = dumps[0] or []
            return SpatialAttnOut(
                context=ctx.data[0].copy(),
                weights=pairs,
                isolated=self.config.uses_spatial and len(pairs) == 0,
            )

    def encode_sequence(self, input_nodes, input_dirs):
        """Run the encoder once; returns (H, final states) as numpy arrays."""
        with ad.no_grad():
            in_nodes = np.array([[self.node_index(n) for n in input_nodes]], dtype=np.int64)
            in_dirs = None
            if self.config.uses_direction_tokens:
                in_dirs = np.array([list(input_dirs)], dtype=np.int64)
            H, states, _ = self._encode(in_nodes, in_dirs)
            H_arr = np.vstack([h.data[0] for h in H])
            state_arr = [(h.data[0].copy(), c.data[0].copy()) for h, c in states]
            return H_arr, state_arr

    def temporal_attention(self, dec_states, window):
        """TemporalAttnOut for one step given explicit states and window."""
        cfg = self.config
        if not cfg.uses_temporal:
            raise ConfigError("temporal attention disabled for this variant")
        if len(window) != cfg.l_in:
            raise DataError(
                f"temporal window must hold exactly l_in={cfg.l_in} states, "
                f"got {len(window)}"
            )
        with ad.no_grad():
            states = [
                (self._const(h.reshape(1, -1)), self._const(c.reshape(1, -1)))
                for h, c in dec_states
            ]
            win = [self._const(h.reshape(1, -1)) for h in window]
            u, z = self._temporal_context(states, win)
            return TemporalAttnOut(context=u.data[0].copy(), weights=z[0].copy())

    def decode_step(self, prev_node_id, prev_direction, states, u, ctx):
        """One decoder step; returns (probability row, new states)."""
        cfg = self.config
        with ad.no_grad():
            st = [
                (self._const(h.reshape(1, -1)), self._const(c.reshape(1, -1)))
                for h, c in states
            ]
            u_t = None
            if cfg.uses_temporal:
                if u is None:
                    raise DataError("this variant needs a temporal context vector")
                u_t = self._const(np.asarray(u).reshape(1, -1))
            dirs = None
            if cfg.uses_direction_tokens:
                dirs = np.array([prev_direction])
            x, _ = self._token_input(
                np.array([self.node_index(prev_node_id)]), dirs, u=u_t
            )
            top, new_states = self._run_stack("dec", x, st)
            probs = self._output_step(
                top,
                self._context_vectors(
                    np.array([ctx.time_slot]), np.array([ctx.weather]),
                    np.array([ctx.driver_id]),
                ),
            )
            out_states = [(h.data[0].copy(), c.data[0].copy()) for h, c in new_states]
            return probs.data[0].copy(), out_states
