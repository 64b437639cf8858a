"""The topic model itself: word-topic encoder, importance network, document
embedding head, decoder, the joint training objective, and inference.

Five loss terms, each independently toggleable: mutual-information document
embedding learning, masked-LM regularization (toy backbone only),
reconstruction of the document embedding from theta_d, and two MMD
distribution-matching terms (document-topic vectors and per-batch
topic-word vectors, both matched to a symmetric Dirichlet prior).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
from torch import nn

from .backbone import (BackboneConfig, CachedBackbone, ContextualEmbeddingDoc,
                       ToyBackbone, TokenizedDoc, Vocabulary, tokenize)
from .corpus import DocumentRecord
from .geometry import SimplexVector, mmd_idk, sample_dirichlet_tensor

_ALPHA_EPS = 1e-6


class ModelError(ValueError):
    pass


class EmptyDocumentError(ModelError):
    pass


@dataclass(frozen=True)
class WordTopicVector:
    theta: SimplexVector
    word: str
    doc_id: str
    position: int


@dataclass(frozen=True)
class DocumentTopicVector:
    theta_d: SimplexVector
    doc_id: str


@dataclass(frozen=True)
class DocumentEmbedding:
    e_d: np.ndarray
    doc_id: str


@dataclass(frozen=True)
class ImportanceWeights:
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=np.float64)
        b = np.asarray(self.beta, dtype=np.float64)
        if a.shape != b.shape:
            raise ModelError("alpha/beta length mismatch")
        if a.size:
            # sigmoid keeps alpha strictly inside (0, 1); the equal-weights
            # ablation pins it at exactly 1
            if np.any(a <= 0) or np.any(a > 1):
                raise ModelError("alpha must lie in (0, 1]")
            if abs(float(b.sum()) - 1.0) > 1e-6:
                raise ModelError("beta must sum to 1")
            if np.max(np.abs(b - a / a.sum())) > 1e-6:
                raise ModelError("beta must equal alpha normalized over the document")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)


@dataclass
class TrainConfig:
    num_topics: int
    epochs: int = 10
    dirichlet_alpha: float = 0.1
    batch_size: int = 16
    learning_rate: float = 1e-3
    warmup_fraction: float = 0.10
    use_mi: bool = True
    use_mlm: bool = True
    use_rec: bool = True
    use_mmd_theta: bool = True
    use_mmd_phi: bool = True
    importance_enabled: bool = True
    negatives_per_doc: int = 0  # 0 = per-doc word count, capped at 64
    hidden: int = 256
    seed: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if self.num_topics < 2:
            raise ModelError("num_topics must be >= 2")
        if self.batch_size < 2:
            raise ModelError("batch_size must be >= 2")
        if self.learning_rate <= 0 or self.dirichlet_alpha <= 0:
            raise ModelError("rates must be positive")
        if not 0 < self.warmup_fraction < 1:
            raise ModelError("warmup_fraction must be in (0, 1)")


def pool_from_alpha(thetas: torch.Tensor, alpha: torch.Tensor) -> torch.Tensor:
    """theta_d = sum_w beta_w * theta_w with beta = alpha / sum(alpha)."""
    if thetas.shape[0] == 0:
        raise EmptyDocumentError("cannot pool an empty document")
    beta = alpha / alpha.sum()
    return beta @ thetas


def pool_document(thetas: list[WordTopicVector],
                  weights: ImportanceWeights) -> DocumentTopicVector:
    if len(thetas) == 0:
        raise EmptyDocumentError("cannot pool an empty document")
    if len(thetas) != weights.beta.shape[0]:
        raise ModelError("theta/weight length mismatch")
    mat = np.stack([t.theta.values for t in thetas])
    pooled = weights.beta @ mat
    # convex combination of simplex rows; renormalize away rounding
    pooled = pooled / pooled.sum()
    return DocumentTopicVector(theta_d=SimplexVector(pooled), doc_id=thetas[0].doc_id)


def mi_loss(doc_embeddings: list[torch.Tensor],
            word_embeddings: list[torch.Tensor],
            negatives_per_doc: int, seed: int) -> torch.Tensor:
    """Contrastive document embedding loss.

    Positive term: mean over the doc's own words of -log sigmoid(e_w . e_d);
    negative term: mean over sampled words from other docs in the batch of
    -log(1 - sigmoid(e_w . e_d)). Sampling is uniform and seeded.
    """
    if len(doc_embeddings) < 2:
        raise ModelError("mi_loss needs a batch of at least 2 documents")
    gen = torch.Generator().manual_seed(seed)
    losses = []
    for i, e_d in enumerate(doc_embeddings):
        own = word_embeddings[i]
        if own.shape[0] == 0:
            continue
        pos = torch.nn.functional.softplus(-(own @ e_d)).mean()
        others = [word_embeddings[j] for j in range(len(word_embeddings))
                  if j != i and word_embeddings[j].shape[0] > 0]
        if not others:
            continue
        pool = torch.cat(others, dim=0)
        n_neg = negatives_per_doc if negatives_per_doc > 0 else min(own.shape[0], 64)
        idx = torch.randint(pool.shape[0], (n_neg,), generator=gen)
        neg = torch.nn.functional.softplus(pool[idx] @ e_d).mean()
        losses.append(pos + neg)
    if not losses:
        raise EmptyDocumentError("no document in the batch has any words")
    return torch.stack(losses).mean()


def rec_loss(target: torch.Tensor, decoded: torch.Tensor) -> torch.Tensor:
    """MSE between the (constant) document embedding and the decoder output."""
    if target.shape != decoded.shape:
        raise ModelError(f"shape mismatch: {tuple(target.shape)} vs {tuple(decoded.shape)}")
    return torch.nn.functional.mse_loss(decoded, target)


def batch_phi(thetas: torch.Tensor, alphas: torch.Tensor,
              words: list[str]) -> torch.Tensor | None:
    """Per-batch topic-word vectors: rows of the alpha-weighted aggregation
    of theta over the batch vocabulary, each normalized to the simplex.

    Returns None (term skipped) when the batch vocabulary has < 2 words.
    """
    if thetas.shape[0] != len(words) or alphas.shape[0] != len(words):
        raise ModelError("thetas/alphas/words length mismatch")
    distinct = sorted(set(words))
    if len(distinct) < 2:
        return None
    word_idx = {w: i for i, w in enumerate(distinct)}
    index = torch.tensor([word_idx[w] for w in words], dtype=torch.long)
    weighted = alphas.unsqueeze(1) * thetas  # (n, Z)
    mat = torch.zeros(len(distinct), thetas.shape[1], dtype=thetas.dtype)
    mat = mat.index_add(0, index, weighted)  # (V_b, Z)
    phi = mat.transpose(0, 1)  # (Z, V_b)
    return phi / phi.sum(dim=1, keepdim=True)


class TopicNetwork(nn.Module):
    """Trainable heads on top of the embedding source."""

    def __init__(self, num_topics: int, dim: int, heads: int, hidden: int = 256,
                 max_len: int = 512, seed: int = 0):
        super().__init__()
        self.num_topics = num_topics
        self.dim = dim
        gen = torch.Generator().manual_seed(seed + 1)
        self.encoder = nn.Sequential(
            nn.Linear(dim, hidden), nn.Softplus(), nn.Linear(hidden, num_topics))
        self.importance_layer = nn.TransformerEncoderLayer(
            d_model=dim, nhead=heads, dim_feedforward=4 * dim,
            batch_first=True, dropout=0.0)
        self.importance_out = nn.Linear(dim, 1)
        self.doc_cls = nn.Parameter(torch.empty(dim))
        self.doc_pos = nn.Embedding(max_len + 1, dim)
        self.doc_layer = nn.TransformerEncoderLayer(
            d_model=dim, nhead=heads, dim_feedforward=4 * dim,
            batch_first=True, dropout=0.0)
        self.decoder = nn.Sequential(
            nn.Linear(num_topics, hidden), nn.Softplus(), nn.Linear(hidden, dim))
        with torch.no_grad():
            for p in self.parameters():
                if p.ndim >= 2:
                    nn.init.normal_(p, std=0.02, generator=gen)
                else:
                    p.zero_()
            for mod in self.modules():
                if isinstance(mod, nn.LayerNorm):
                    mod.weight.fill_(1.0)
            nn.init.normal_(self.doc_cls.unsqueeze(0), std=0.02, generator=gen)

    def word_topics(self, rows: torch.Tensor) -> torch.Tensor:
        """(n, dim) embedding rows -> (n, Z) simplex rows."""
        return torch.softmax(self.encoder(rows), dim=-1)

    def importance_alpha(self, rows: torch.Tensor, enabled: bool = True) -> torch.Tensor:
        """Per-word alpha in (0, 1); all-ones when the network is disabled."""
        if rows.shape[0] == 0:
            return rows.new_zeros((0,))
        if not enabled:
            return rows.new_ones(rows.shape[0])
        h = self.importance_layer(rows.unsqueeze(0)).squeeze(0)
        a = torch.sigmoid(self.importance_out(h).squeeze(-1))
        return a.clamp(_ALPHA_EPS, 1.0 - _ALPHA_EPS)

    def doc_embedding(self, rows: torch.Tensor) -> torch.Tensor:
        """Transformer layer over [learned CLS] + word rows (+ positions);
        returns the transformed CLS slot."""
        if rows.shape[0] == 0:
            raise EmptyDocumentError("cannot embed an empty document")
        if rows.shape[0] + 1 > self.doc_pos.num_embeddings:
            raise ModelError("document longer than the doc head's position table")
        x = torch.cat([self.doc_cls.unsqueeze(0), rows], dim=0)
        pos = torch.arange(x.shape[0])
        x = x + self.doc_pos(pos)
        return self.doc_layer(x.unsqueeze(0)).squeeze(0)[0]


@dataclass
class TopicModel:
    """A trained (or initialized) model: network + backbone + vocab + config."""

    network: TopicNetwork
    backbone: ToyBackbone | CachedBackbone
    backbone_config: BackboneConfig
    vocab: Vocabulary
    config: TrainConfig

    def embed_doc(self, doc: DocumentRecord | ContextualEmbeddingDoc) -> ContextualEmbeddingDoc:
        if isinstance(doc, ContextualEmbeddingDoc):
            return doc
        return self.backbone.embed([tokenize(doc, self.vocab)])[0]

    def encode_word_topics(self, emb: ContextualEmbeddingDoc) -> list[WordTopicVector]:
        thetas = self.network.word_topics(emb.word_embeddings)
        return [WordTopicVector(theta=SimplexVector(t), word=w, doc_id=emb.doc_id,
                                position=i)
                for i, (t, w) in enumerate(zip(thetas.detach().double().numpy(), emb.words))]

    def importance(self, emb: ContextualEmbeddingDoc) -> ImportanceWeights:
        alpha = self.network.importance_alpha(
            emb.word_embeddings, enabled=self.config.importance_enabled)
        a = alpha.detach().double().numpy()
        beta = a / a.sum() if a.size else a
        return ImportanceWeights(alpha=a, beta=beta)

    def infer_document(self, doc: DocumentRecord | ContextualEmbeddingDoc
                       ) -> tuple[DocumentTopicVector, list[WordTopicVector], ImportanceWeights]:
        """Pure forward pass; no parameter mutation."""
        with torch.no_grad():
            emb = self.embed_doc(doc)
            if emb.word_embeddings.shape[0] == 0:
                raise EmptyDocumentError(f"document {emb.doc_id!r} has no words")
            thetas = self.encode_word_topics(emb)
            weights = self.importance(emb)
            theta_d = pool_document(thetas, weights)
        return theta_d, thetas, weights

    def trainable_parameters(self):
        params = list(self.network.parameters())
        if isinstance(self.backbone, ToyBackbone):
            params += [p for p in self.backbone.parameters() if p.requires_grad]
        # deduplicate while keeping order
        seen, out = set(), []
        for p in params:
            if id(p) not in seen:
                seen.add(id(p))
                out.append(p)
        return out


LOSS_TERMS = ("mi", "mlm", "rec", "mmd_theta", "mmd_phi")


def total_loss(model: TopicModel, docs: list[TokenizedDoc], seed: int
               ) -> tuple[torch.Tensor, dict[str, float]]:
    """Joint objective: unweighted sum of the five terms; toggled-off terms
    contribute exactly 0. Returns (loss, per-term breakdown)."""
    cfg = model.config
    nonempty = [d for d in docs if d.token_ids]
    if len(nonempty) < 2:
        raise ModelError("need at least 2 non-empty documents per batch")
    embs = model.backbone.embed(nonempty)
    zero = torch.zeros(())
    terms: dict[str, torch.Tensor] = {k: zero for k in LOSS_TERMS}

    thetas = [model.network.word_topics(e.word_embeddings) for e in embs]
    alphas = [model.network.importance_alpha(e.word_embeddings,
                                             enabled=cfg.importance_enabled)
              for e in embs]
    theta_d = torch.stack([pool_from_alpha(t, a) for t, a in zip(thetas, alphas)])

    needs_doc_emb = cfg.use_mi or cfg.use_rec
    if needs_doc_emb:
        doc_embs = [model.network.doc_embedding(e.word_embeddings) for e in embs]

    if cfg.use_mi:
        terms["mi"] = mi_loss(doc_embs, [e.word_embeddings for e in embs],
                              cfg.negatives_per_doc, seed)
    if cfg.use_mlm and isinstance(model.backbone, ToyBackbone):
        mlm, _ = model.backbone.mlm_loss(nonempty, seed + 1)
        terms["mlm"] = mlm
    if cfg.use_rec:
        # the target is a constant: gradients reach the decoder and, through
        # theta_d, the encoder/importance nets, but not the doc head
        target = torch.stack([e.detach() for e in doc_embs])
        decoded = model.network.decoder(theta_d)
        terms["rec"] = rec_loss(target, decoded)
    if cfg.use_mmd_theta:
        prior = sample_dirichlet_tensor(cfg.dirichlet_alpha, cfg.num_topics,
                                        theta_d.shape[0], seed + 2, dtype=theta_d.dtype)
        terms["mmd_theta"] = mmd_idk(theta_d, prior)
    if cfg.use_mmd_phi:
        all_words = [w for e in embs for w in e.words]
        phi = batch_phi(torch.cat(thetas, dim=0), torch.cat(alphas, dim=0), all_words)
        if phi is not None:
            prior = sample_dirichlet_tensor(cfg.dirichlet_alpha, phi.shape[1],
                                            phi.shape[0], seed + 3, dtype=phi.dtype)
            terms["mmd_phi"] = mmd_idk(phi, prior)

    total = terms["mi"] + terms["mlm"] + terms["rec"] + terms["mmd_theta"] + terms["mmd_phi"]
    breakdown = {k: float(v.detach()) for k, v in terms.items()}
    return total, breakdown


def warmup_factor(step: int, total_steps: int, warmup_fraction: float) -> float:
    """0 at step 0, 1 at the end of warmup, linear decay to 0 at the last step."""
    warmup = max(1, round(warmup_fraction * total_steps))
    if step <= warmup:
        return step / warmup
    return max(0.0, (total_steps - step) / (total_steps - warmup))


def diagnostic_mmd(model: TopicModel, docs: list[TokenizedDoc], seed: int,
                   limit: int = 512) -> float:
    """MMD between current theta_d's and fresh Dirichlet prior draws."""
    sample = [d for d in docs if d.token_ids][:limit]
    cfg = model.config
    with torch.no_grad():
        theta_rows = []
        for start in range(0, len(sample), 64):
            embs = model.backbone.embed(sample[start:start + 64])
            for e in embs:
                t = model.network.word_topics(e.word_embeddings)
                a = model.network.importance_alpha(e.word_embeddings,
                                                   enabled=cfg.importance_enabled)
                theta_rows.append(pool_from_alpha(t, a))
        theta = torch.stack(theta_rows)
        prior = sample_dirichlet_tensor(cfg.dirichlet_alpha, cfg.num_topics,
                                        theta.shape[0], seed, dtype=theta.dtype)
        return float(mmd_idk(theta, prior))


def build_model(config: TrainConfig, backbone_config: BackboneConfig,
                vocab: Vocabulary, cache=None) -> TopicModel:
    if backbone_config.mode == "toy":
        backbone = ToyBackbone(backbone_config, vocab, seed=config.seed)
        dim = backbone_config.dim
    else:
        if cache is None:
            raise ModelError("cached mode requires an embedding cache")
        backbone = CachedBackbone(cache)
        dim = cache.dim
        if backbone_config.dim != dim:
            backbone_config.dim = dim
    network = TopicNetwork(config.num_topics, dim, backbone_config.heads,
                           hidden=config.hidden, max_len=backbone_config.max_len,
                           seed=config.seed)
    return TopicModel(network=network, backbone=backbone,
                      backbone_config=backbone_config, vocab=vocab, config=config)


def train(corpus: list[DocumentRecord], model: TopicModel,
          progress: bool = False) -> list[dict]:
    """Minibatch training with Adam and a linear warmup/decay schedule.

    Returns the per-epoch history; entry 0 is the pre-training diagnostic.
    """
    cfg = model.config
    if len(corpus) < 2 * cfg.batch_size:
        raise ModelError(
            f"corpus has {len(corpus)} docs; need at least {2 * cfg.batch_size}")
    if cfg.deterministic:
        torch.manual_seed(cfg.seed)
        torch.set_num_threads(1)

    docs = [tokenize(d, model.vocab) for d in corpus]
    steps_per_epoch = len(docs) // cfg.batch_size
    total_steps = cfg.epochs * steps_per_epoch
    params = model.trainable_parameters()
    opt = torch.optim.Adam(params, lr=cfg.learning_rate)

    diag_seed = cfg.seed + 777_000
    history: list[dict] = [{"epoch": 0,
                            "diagnostic_mmd": diagnostic_mmd(model, docs, diag_seed)}]
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(docs))
        sums = {k: 0.0 for k in LOSS_TERMS}
        sums["total"] = 0.0
        n_steps = 0
        for b in range(steps_per_epoch):
            batch = [docs[i] for i in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
            lr = cfg.learning_rate * warmup_factor(step, total_steps, cfg.warmup_fraction)
            for group in opt.param_groups:
                group["lr"] = lr
            loss, breakdown = total_loss(model, batch,
                                         seed=(cfg.seed * 1_000_003 + step) % 2**31)
            if not math.isfinite(float(loss.detach())):
                raise ModelError(f"non-finite loss at step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            for k, v in breakdown.items():
                sums[k] += v
            sums["total"] += float(loss.detach())
            n_steps += 1
            step += 1
        entry = {"epoch": epoch}
        entry.update({k: sums[k] / max(1, n_steps) for k in ("total", *LOSS_TERMS)})
        entry["diagnostic_mmd"] = diagnostic_mmd(model, docs, diag_seed)
        history.append(entry)
        if progress:
            print(f"epoch {epoch}/{cfg.epochs} "
                  f"total={entry['total']:.4f} diag_mmd={entry['diagnostic_mmd']:.5f}")
    return history


def save_checkpoint(model: TopicModel, path) -> None:
    payload = {
        "format_version": 1,
        "train_config": asdict(model.config),
        "backbone_config": asdict(model.backbone_config),
        "vocab": list(model.vocab.id_to_word),
    }
    payload["network_state"] = model.network.state_dict()
    if isinstance(model.backbone, ToyBackbone):
        payload["backbone_state"] = model.backbone.state_dict()
    torch.save(payload, path)


def load_checkpoint(path, cache=None) -> TopicModel:
    payload = torch.load(path, weights_only=False)
    if payload.get("format_version") != 1:
        raise ModelError(f"unsupported checkpoint version {payload.get('format_version')}")
    cfg = TrainConfig(**payload["train_config"])
    bcfg = BackboneConfig(**payload["backbone_config"])
    vocab_words = payload["vocab"]
    vocab = Vocabulary(vocab_words[4:])
    if vocab.id_to_word != vocab_words:
        raise ModelError("checkpoint vocabulary is inconsistent")
    model = build_model(cfg, bcfg, vocab, cache=cache)
    model.network.load_state_dict(payload["network_state"])
    if isinstance(model.backbone, ToyBackbone):
        model.backbone.load_state_dict(payload["backbone_state"])
    return model
