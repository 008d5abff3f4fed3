"""Shared network fixtures: synthetic batches, the gradient check and the causality probe."""
import numpy as np
import torch

from trajfollow.policy import PolicyConfig, TranslationPolicy

SMALL = dict(low_dim=6, high_dim=4, action_dim=2, max_len=8, embed_dim=8, layer_dims=(8, 8),
             head_dims=(8,), n_heads=2)


def batch(cfg, B=3, n=5, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    mask = torch.zeros(B, cfg.max_len, dtype=torch.bool)
    mask[:, cfg.max_len - n:] = True
    t = torch.zeros(B, cfg.max_len, dtype=torch.long)
    t[:, cfg.max_len - n:] = torch.arange(n) * 3
    prompt = torch.randn(B, cfg.max_len, cfg.high_dim, generator=g, dtype=dtype) * mask[..., None]
    return {"prompt": prompt, "prompt_mask": mask, "prompt_t": t,
            "lows": torch.randn(B, cfg.k, cfg.low_dim, generator=g, dtype=dtype),
            "goal": torch.randn(B, cfg.high_dim, generator=g, dtype=dtype)}


def causality_probe(pol, b):
    """Perturbing token i+1.. never changes block outputs at positions <= i, but does change the last one."""
    seq = pol.actor
    tokens = torch.cat([seq.encode_prompt(b["prompt"], b["prompt_t"]), seq.low_enc(b["lows"])], dim=1)
    valid = torch.ones(tokens.shape[:2], dtype=torch.bool)
    blocks = seq.backbone

    def outputs(tok):
        x = tok
        for proj, block in zip(blocks.projs, blocks.blocks):
            T = x.shape[1]
            allowed = torch.tril(torch.ones(T, T, dtype=torch.bool))[None].expand(len(x), T, T)
            x, _ = block(proj(x), allowed)
        return x

    base = outputs(tokens)
    for i in range(tokens.shape[1] - 1):
        pert = tokens.clone()
        pert[:, i + 1:] += torch.randn_like(pert[:, i + 1:])
        out = outputs(pert)
        assert torch.allclose(out[:, :i + 1], base[:, :i + 1], atol=1e-6)
        assert not torch.allclose(out[:, -1], base[:, -1])
    assert torch.equal(blocks(tokens, valid)[0], blocks.ln_f(base)[:, -1])


def gradient_check(seed):
    """Max relative error between autograd and central differences of the actor log-probability."""
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    backbone = ["causal-attention", "recurrent"][seed % 2]
    cfg = PolicyConfig(low_dim=int(rng.integers(2, 7)), high_dim=int(rng.integers(2, 5)),
                       action_dim=int(rng.integers(1, 4)), backbone=backbone, k=int(rng.integers(1, 4)),
                       max_len=6, embed_dim=8, layer_dims=(8, 8), head_dims=(8,), n_heads=2, dropout=0.0)
    pol = TranslationPolicy(cfg).double().eval()
    b = batch(cfg, B=2, n=int(rng.integers(1, 7)), seed=seed, dtype=torch.float64)
    actions = torch.as_tensor(rng.normal(size=(2, cfg.action_dim)))
    params = pol.actor_parameters()

    def f():
        return pol.log_prob(b, actions).sum()

    grads = torch.autograd.grad(f(), params, allow_unused=True)
    worst, h = 0.0, 1e-6
    for p, g in zip(params, grads):
        g = torch.zeros_like(p) if g is None else g
        flat = p.data.view(-1)
        for i in rng.choice(flat.numel(), size=min(6, flat.numel()), replace=False):
            old = flat[i].item()
            with torch.no_grad():
                flat[i] = old + h
                up = f().item()
                flat[i] = old - h
                down = f().item()
                flat[i] = old
            fd = (up - down) / (2 * h)
            an = g.view(-1)[i].item()
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-3))
    return worst
