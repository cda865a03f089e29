import numpy as np

from resdta.dataset import EncodedInteractions
from resdta.model import ModelConfig

TINY_MODEL = ModelConfig(
    smiles_len=12,
    protein_len=20,
    embed_dim=6,
    smiles_vocab=7,
    protein_vocab=5,
    stream_filters=(2, 3, 4),
    combined_filters=(2, 3, 4),
    kernel_size=3,
    stream_repr_dim=3,
    combined_repr_dim=4,
    fc_dims=(8, 1),
    dropout_p=0.0,
)


def synthetic_records(
    n_drugs=10,
    n_proteins=8,
    n_interactions=64,
    seed=0,
    config=TINY_MODEL,
    targets="additive",
):
    """Random token tables plus interactions with controllable targets.

    ``targets='additive'`` builds affinities from per-drug and per-protein
    effects (learnable signal); ``'random'`` draws i.i.d. noise.
    """
    rng = np.random.default_rng(seed)
    pairs = np.stack(
        [
            rng.integers(0, n_drugs, n_interactions),
            rng.integers(0, n_proteins, n_interactions),
        ],
        axis=1,
    ).astype(np.int64)
    if targets == "additive":
        drug_effect = rng.normal(size=n_drugs)
        protein_effect = rng.normal(size=n_proteins)
        affinities = drug_effect[pairs[:, 0]] + protein_effect[pairs[:, 1]]
    else:
        affinities = rng.normal(size=n_interactions)
    return EncodedInteractions(
        drug_ids=tuple(f"d{i}" for i in range(n_drugs)),
        protein_ids=tuple(f"p{i}" for i in range(n_proteins)),
        drug_tokens=rng.integers(1, config.smiles_vocab + 1, size=(n_drugs, config.smiles_len)),
        protein_tokens=rng.integers(
            1, config.protein_vocab + 1, size=(n_proteins, config.protein_len)
        ),
        pairs=pairs,
        affinities=affinities.astype(np.float64),
    )
