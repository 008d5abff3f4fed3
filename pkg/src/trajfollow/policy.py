"""Translation policies: abstract trajectory + recent low states -> action.

Input sequence for the sequential backbones is ``[x_1..x_L, l_1..l_k]``: the
encoded (left padded) prompt followed by the k most recent low states.
The output embedding of the last token feeds an MLP head. Actor and critic
are two copies of the same network with separate weights; the actor emits
the Gaussian mean, the critic a scalar value.
"""
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn

from .exceptions import ConfigurationError, UnsupportedOperationError

BACKBONES = ("causal-attention", "recurrent", "feedforward-gc", "feedforward-sgc")
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PolicyConfig:
    low_dim: int
    high_dim: int
    action_dim: int
    backbone: str = "causal-attention"
    k: int = 2
    max_len: int = 32
    embed_dim: int = 32
    layer_dims: tuple = (128, 128, 128, 128)
    head_dims: tuple = (128, 128)
    n_heads: int = 4
    mlp_ratio: int = 2
    dropout: float = 0.1
    timestep_embeddings: bool = True
    max_timestep: int = 1024
    init_log_std: float = -0.5
    sgc_lookahead: int = 5

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        object.__setattr__(self, "head_dims", tuple(int(d) for d in self.head_dims))
        if self.backbone not in BACKBONES:
            raise ConfigurationError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.k < 1:
            raise ConfigurationError("k must be >= 1")
        dims = (self.low_dim, self.high_dim, self.action_dim, self.max_len, self.embed_dim,
                self.n_heads, self.mlp_ratio, self.max_timestep, self.sgc_lookahead,
                *self.layer_dims, *self.head_dims)
        if not self.layer_dims or min(dims) < 1:
            raise ConfigurationError("all dimensions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must lie in [0, 1)")
        if self.backbone == "causal-attention" and any(d % self.n_heads for d in self.layer_dims):
            raise ConfigurationError("layer widths must be divisible by n_heads")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def for_task(cls, task, **overrides):
        """Defaults per environment (Box Pusher k=2, embed 32; Couch k=5, embed 64)."""
        base = dict(low_dim=task.low_dim, high_dim=task.high_dim, action_dim=task.action_dim,
                    max_len=task.plan_cfg.max_len)
        if task.name == "couch":
            base.update(k=5, embed_dim=64)
        base.update(overrides)
        return cls(**base)


def mlp(sizes, act=nn.Tanh, out_act=None):
    layers = []
    for i in range(len(sizes) - 1):
        layers.append(nn.Linear(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(act())
        elif out_act is not None:
            layers.append(out_act())
    return nn.Sequential(*layers)


class StateEncoder(nn.Module):
    """Per-state feedforward encoder with ReLU activations."""

    def __init__(self, in_dim, embed_dim):
        super().__init__()
        self.net = mlp([in_dim, embed_dim, embed_dim], act=nn.ReLU)

    def forward(self, x):
        return self.net(x)


class CausalSelfAttention(nn.Module):
    def __init__(self, width, n_heads, dropout):
        super().__init__()
        self.n_heads = n_heads
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)
        self.attn_drop = nn.Dropout(dropout)
        self.resid_drop = nn.Dropout(dropout)

    def forward(self, x, allowed):
        # allowed: (B, T, T) bool, True where query i may read key j
        B, T, C = x.shape
        H = self.n_heads
        q, k, v = self.qkv(x).view(B, T, 3, H, C // H).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-2, -1) / math.sqrt(C // H)
        scores = scores.masked_fill(~allowed[:, None], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        out = self.attn_drop(weights) @ v
        out = out.transpose(1, 2).reshape(B, T, C)
        return self.resid_drop(self.proj(out)), weights


class Block(nn.Module):
    """Pre-norm transformer block."""

    def __init__(self, width, n_heads, mlp_ratio, dropout):
        super().__init__()
        self.ln1 = nn.LayerNorm(width)
        self.attn = CausalSelfAttention(width, n_heads, dropout)
        self.ln2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(nn.Linear(width, mlp_ratio * width), nn.GELU(),
                                 nn.Linear(mlp_ratio * width, width), nn.Dropout(dropout))

    def forward(self, x, allowed):
        a, w = self.attn(self.ln1(x), allowed)
        x = x + a
        return x + self.mlp(self.ln2(x)), w


class CausalTransformer(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        dims = (cfg.embed_dim,) + cfg.layer_dims
        self.blocks = nn.ModuleList()
        self.projs = nn.ModuleList()
        for i, width in enumerate(cfg.layer_dims):
            self.projs.append(nn.Linear(dims[i], width) if dims[i] != width else nn.Identity())
            self.blocks.append(Block(width, cfg.n_heads, cfg.mlp_ratio, cfg.dropout))
        self.ln_f = nn.LayerNorm(cfg.layer_dims[-1])
        self.drop = nn.Dropout(cfg.dropout)
        self.out_dim = cfg.layer_dims[-1]

    def forward(self, tokens, valid):
        T = tokens.shape[1]
        causal = torch.tril(torch.ones(T, T, dtype=torch.bool, device=tokens.device))
        # a token always sees itself so padded query rows stay finite
        allowed = (causal & valid[:, None, :]) | torch.eye(T, dtype=torch.bool, device=tokens.device)
        x = self.drop(tokens)
        attn = []
        for proj, block in zip(self.projs, self.blocks):
            x, w = block(proj(x), allowed)
            attn.append(w)
        return self.ln_f(x)[:, -1], attn


class MaskedLSTM(nn.Module):
    """Stacked LSTM cells that skip padded steps (state is carried through)."""

    def __init__(self, cfg):
        super().__init__()
        dims = (cfg.embed_dim,) + cfg.layer_dims
        self.cells = nn.ModuleList(nn.LSTMCell(dims[i], dims[i + 1]) for i in range(len(cfg.layer_dims)))
        self.drop = nn.Dropout(cfg.dropout)
        self.out_dim = cfg.layer_dims[-1]

    def forward(self, tokens, valid):
        B, T, _ = tokens.shape
        state = [(tokens.new_zeros(B, c.hidden_size), tokens.new_zeros(B, c.hidden_size)) for c in self.cells]
        for t in range(T):
            x = tokens[:, t]
            keep = valid[:, t, None]
            for i, cell in enumerate(self.cells):
                h, c = cell(x, state[i])
                h = torch.where(keep, h, state[i][0])
                c = torch.where(keep, c, state[i][1])
                state[i] = (h, c)
                x = self.drop(h)
        return state[-1][0], None


class SequenceNet(nn.Module):
    """Encoders + sequential backbone + head; one instance for the actor, one for the critic."""

    def __init__(self, cfg, out_dim):
        super().__init__()
        self.cfg = cfg
        self.high_enc = StateEncoder(cfg.high_dim, cfg.embed_dim)
        self.low_enc = StateEncoder(cfg.low_dim, cfg.embed_dim)
        if cfg.timestep_embeddings:
            self.t_embed = nn.Embedding(cfg.max_timestep, cfg.embed_dim)
        if cfg.backbone == "causal-attention":
            self.backbone = CausalTransformer(cfg)
        else:
            self.backbone = MaskedLSTM(cfg)
        self.head = mlp([self.backbone.out_dim, *cfg.head_dims, out_dim])

    def encode_prompt(self, prompt, prompt_t=None):
        x = self.high_enc(prompt)
        if self.cfg.timestep_embeddings:
            if prompt_t is None:
                raise ConfigurationError("timestep embeddings need prompt timesteps")
            if int(prompt_t.max()) >= self.cfg.max_timestep:
                raise ConfigurationError(f"prompt timestep beyond max_timestep={self.cfg.max_timestep}")
            x = x + self.t_embed(prompt_t)
        return x

    def forward(self, batch):
        prompt, mask = batch["prompt"], batch["prompt_mask"]
        if prompt.shape[1] > self.cfg.max_len:
            raise ConfigurationError(f"prompt length {prompt.shape[1]} exceeds max_len={self.cfg.max_len}")
        lows = batch["lows"]
        if lows.shape[1] != self.cfg.k:
            raise ConfigurationError(f"expected {self.cfg.k} low states, got {lows.shape[1]}")
        tokens = torch.cat([self.encode_prompt(prompt, batch.get("prompt_t")), self.low_enc(lows)], dim=1)
        valid = torch.cat([mask, torch.ones(lows.shape[:2], dtype=torch.bool, device=lows.device)], dim=1)
        z, attn = self.backbone(tokens, valid)
        return self.head(z), attn


class FeedforwardNet(nn.Module):
    """GC / SGC baseline: MLP on the flattened low-state stack and a goal."""

    def __init__(self, cfg, out_dim):
        super().__init__()
        self.cfg = cfg
        self.net = mlp([cfg.k * cfg.low_dim + cfg.high_dim, *cfg.layer_dims[:2], *cfg.head_dims, out_dim])

    def forward(self, batch):
        lows = batch["lows"]
        x = torch.cat([lows.reshape(lows.shape[0], -1), batch["goal"]], dim=-1)
        return self.net(x), None


def _build(cfg, out_dim):
    if cfg.backbone.startswith("feedforward"):
        return FeedforwardNet(cfg, out_dim)
    return SequenceNet(cfg, out_dim)


class TranslationPolicy(nn.Module):
    """Actor-critic pair with a state-independent, learned log standard deviation."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.actor = _build(cfg, cfg.action_dim)
        self.critic = _build(cfg, 1)
        self.log_std = nn.Parameter(torch.full((cfg.action_dim,), float(cfg.init_log_std)))

    @property
    def goal_mode(self):
        return "subgoal" if self.cfg.backbone == "feedforward-sgc" else "final"

    def actor_parameters(self):
        return list(self.actor.parameters()) + [self.log_std]

    def forward(self, batch):
        """Returns (mean, log_std, value, attention). Attention is per layer (B, heads, T, T) or None."""
        batch = trim_padding(batch)
        mean, attn = self.actor(batch)
        value, _ = self.critic(batch)
        return mean, self.log_std.expand_as(mean), value.squeeze(-1), attn

    def distribution(self, batch):
        mean, _ = self.actor(trim_padding(batch))
        return torch.distributions.Normal(mean, self.log_std.exp().expand_as(mean))

    def log_prob(self, batch, actions):
        return self.distribution(batch).log_prob(actions).sum(-1)

    def value(self, batch):
        return self.critic(trim_padding(batch))[0].squeeze(-1)

    def attention(self, batch):
        if self.cfg.backbone != "causal-attention":
            raise UnsupportedOperationError(f"backbone {self.cfg.backbone!r} has no attention weights")
        return self.actor(batch)[1]

    @torch.no_grad()
    def act(self, batch, mode="mean", generator=None):
        """Mean or sampled action (numpy, normalised space) plus value and log-prob."""
        batch = trim_padding(batch)
        mean, _ = self.actor(batch)
        value = self.value(batch)
        std = self.log_std.exp().expand_as(mean)
        if mode == "mean":
            action = mean
        elif mode == "sample":
            noise = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
            action = mean + std * noise
        else:
            raise ConfigurationError(f"mode must be 'mean' or 'sample', got {mode!r}")
        logp = torch.distributions.Normal(mean, std).log_prob(action).sum(-1)
        return action.numpy(), value.numpy(), logp.numpy()


# ------------------------------------------------------------------ batching

def trim_padding(batch):
    """Drop leading prompt columns that are padding in every row.

    Padded positions are never attended to (nor fed to the recurrent
    cells), so removing them leaves the outputs unchanged.
    """
    mask = batch.get("prompt_mask")
    if mask is None or mask.ndim != 2 or mask.shape[1] == 0:
        return batch
    used = mask.any(0)
    start = int(torch.argmax(used.to(torch.uint8))) if used.any() else mask.shape[1]
    if start == 0:
        return batch
    out = dict(batch)
    for k in ("prompt", "prompt_mask", "prompt_t"):
        if k in out:
            out[k] = out[k][:, start:]
    return out


OBS_KEYS = ("prompt", "prompt_mask", "prompt_t", "lows", "goal")


def collate(obs_list, dtype=torch.float32):
    """Stack runner observations into a tensor batch."""
    out = {}
    for key in OBS_KEYS:
        arr = np.stack([o[key] for o in obs_list])
        out[key] = to_tensor(key, arr, dtype)
    return out


def to_tensor(key, arr, dtype=torch.float32):
    if key == "prompt_mask":
        return torch.as_tensor(arr, dtype=torch.bool)
    if key == "prompt_t":
        return torch.as_tensor(arr, dtype=torch.long)
    return torch.as_tensor(arr, dtype=dtype)


# --------------------------------------------------------------- checkpoints

def save_checkpoint(path, policy, seed=None, extra=None):
    """Named parameter arrays plus the producing config, in one ``.npz``."""
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in policy.state_dict().items()}
    meta = {"version": CHECKPOINT_VERSION, "config": policy.cfg.to_dict(), "seed": seed,
            "extra": extra or {}}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)


def read_checkpoint_meta(path):
    with np.load(path, allow_pickle=False) as data:
        return json.loads(str(data["__meta__"]))


def load_checkpoint(path, expected=None):
    """Rebuild the policy; refuses a version or config mismatch."""
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"cannot read checkpoint {path}: {exc}") from exc
    with data:
        if "__meta__" not in data:
            raise ConfigurationError(f"{path} is not a policy checkpoint")
        meta = json.loads(str(data["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ConfigurationError(f"checkpoint version {meta.get('version')} is not supported")
        cfg = PolicyConfig.from_dict(meta["config"])
        if expected is not None and expected != cfg:
            raise ConfigurationError("checkpoint config does not match the requested policy config")
        policy = TranslationPolicy(cfg)
        state = {k[len("param/"):]: torch.from_numpy(data[k]) for k in data.files if k.startswith("param/")}
    own = policy.state_dict()
    if set(own) != set(state) or any(own[k].shape != state[k].shape for k in own):
        raise ConfigurationError("checkpoint parameters do not match the config shapes")
    if not all(torch.isfinite(v).all() for v in state.values() if v.is_floating_point()):
        raise ConfigurationError("checkpoint contains non-finite parameters")
    policy.load_state_dict(state)
    policy.eval()
    return policy, meta
