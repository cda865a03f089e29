"""Three-stream residual 1D-CNN for binding affinity regression.

A drug stream and a protein stream each embed their token vector and run three
1D convolutions (32/64/96 filters, kernel 8, stride 1, no padding), ReLU after
each. Every conv output is global-max-pooled over the length axis; the skip
aggregation concatenates the three pooled vectors (192 features) and projects
to 256. The combined stream concatenates the two final (pre-pool) feature maps
along the length axis (96 x 1058), applies its own conv/pool block
(192/288/96 filters, 576 pooled features) and projects to 512. The three
representations feed a 1024-wide fully connected head (2048, 2048, 1024, 512,
1) with ReLU and dropout 0.1 on the hidden layers. With ``use_skip=False``
only the last conv's pooled vector feeds each projection (the ablation).
"""

from __future__ import annotations

import json
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

CHECKPOINT_FORMAT_VERSION = 1


class DegenerateOutputError(ValueError):
    """A convolution would produce an empty output."""


class TokenOutOfRangeError(ValueError):
    """A token label falls outside [0, vocab_size]."""


class ShapeMismatchError(ValueError):
    pass


class CheckpointError(RuntimeError):
    pass


class CheckpointIOError(CheckpointError, OSError):
    """The checkpoint file is unreadable or truncated."""


class VersionMismatchError(CheckpointError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


def conv_output_length(l_in: int, kernel: int, stride: int = 1, padding: int = 0, dilation: int = 1) -> int:
    """Output length of a 1D convolution; raises if no full window fits."""
    out = (l_in + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1
    if out < 1:
        raise DegenerateOutputError(
            f"conv over length {l_in} with kernel {kernel} leaves no output"
        )
    return out


@dataclass(frozen=True)
class ModelConfig:
    smiles_len: int = 100
    protein_len: int = 1000
    embed_dim: int = 128
    smiles_vocab: int = 64
    protein_vocab: int = 25
    stream_filters: tuple[int, int, int] = (32, 64, 96)
    combined_filters: tuple[int, int, int] = (192, 288, 96)
    kernel_size: int = 8
    stride: int = 1
    padding: int = 0
    dilation: int = 1
    stream_repr_dim: int = 256
    combined_repr_dim: int = 512
    fc_dims: tuple[int, ...] = (2048, 2048, 1024, 512, 1)
    dropout_p: float = 0.1
    use_skip: bool = True

    def __post_init__(self):
        object.__setattr__(self, "stream_filters", tuple(self.stream_filters))
        object.__setattr__(self, "combined_filters", tuple(self.combined_filters))
        object.__setattr__(self, "fc_dims", tuple(self.fc_dims))
        dims = (
            self.smiles_len, self.protein_len, self.embed_dim, self.smiles_vocab,
            self.protein_vocab, self.kernel_size, self.stride, self.dilation,
            self.stream_repr_dim, self.combined_repr_dim, *self.stream_filters,
            *self.combined_filters, *self.fc_dims,
        )
        if any(d <= 0 for d in dims) or self.padding < 0:
            raise ValueError("all dimensions must be positive (padding >= 0)")
        if len(self.stream_filters) != 3 or len(self.combined_filters) != 3:
            raise ValueError("filter lists must have length 3")
        if self.fc_dims[-1] != 1:
            raise ValueError("fc_dims must end in 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")

    def _length_chain(self, l_in: int, n_convs: int = 3) -> tuple[int, ...]:
        lengths = []
        length = l_in
        for _ in range(n_convs):
            length = conv_output_length(length, self.kernel_size, self.stride, self.padding, self.dilation)
            lengths.append(length)
        return tuple(lengths)

    def stream_lengths(self, stream: str) -> tuple[int, ...]:
        """Per-conv output lengths for the drug or protein stream."""
        l_in = self.smiles_len if stream == "drug" else self.protein_len
        return self._length_chain(l_in)

    def combined_lengths(self) -> tuple[int, ...]:
        l_in = self.stream_lengths("drug")[-1] + self.stream_lengths("protein")[-1]
        return self._length_chain(l_in)

    @property
    def fc_input_dim(self) -> int:
        return 2 * self.stream_repr_dim + self.combined_repr_dim

    def to_dict(self) -> dict:
        return asdict(self)


class _ConvStream(nn.Module):
    """Three convs with per-conv global max pools and a linear projection."""

    def __init__(self, in_channels: int, filters, kernel_size: int, use_skip: bool, out_dim: int):
        super().__init__()
        self.use_skip = use_skip
        channels = [in_channels, *filters]
        self.convs = nn.ModuleList(
            nn.Conv1d(channels[i], channels[i + 1], kernel_size=kernel_size)
            for i in range(len(filters))
        )
        pooled_dim = sum(filters) if use_skip else filters[-1]
        self.projection = nn.Linear(pooled_dim, out_dim)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        pooled = []
        for conv in self.convs:
            x = torch.relu(conv(x))
            pooled.append(torch.amax(x, dim=2))
        features = torch.cat(pooled, dim=1) if self.use_skip else pooled[-1]
        return self.projection(features), x


class ResDTA(nn.Module):
    """The full network; ``seed`` makes the initial weights reproducible."""

    def __init__(self, config: ModelConfig | None = None, seed: int | None = None):
        super().__init__()
        self.config = config or ModelConfig()
        cfg = self.config
        # Validates the whole shape chain up front (degenerate configs raise).
        cfg.combined_lengths()

        # Row 0 is the learned padding embedding, rows 1..size the symbols.
        self.drug_embedding = nn.Embedding(cfg.smiles_vocab + 1, cfg.embed_dim)
        self.protein_embedding = nn.Embedding(cfg.protein_vocab + 1, cfg.embed_dim)
        self.drug_stream = _ConvStream(
            cfg.embed_dim, cfg.stream_filters, cfg.kernel_size, cfg.use_skip, cfg.stream_repr_dim
        )
        self.protein_stream = _ConvStream(
            cfg.embed_dim, cfg.stream_filters, cfg.kernel_size, cfg.use_skip, cfg.stream_repr_dim
        )
        self.combined_stream = _ConvStream(
            cfg.stream_filters[-1], cfg.combined_filters, cfg.kernel_size, cfg.use_skip, cfg.combined_repr_dim
        )

        layers: list[nn.Module] = []
        in_dim = cfg.fc_input_dim
        for out_dim in cfg.fc_dims[:-1]:
            layers += [nn.Linear(in_dim, out_dim), nn.ReLU(), nn.Dropout(cfg.dropout_p)]
            in_dim = out_dim
        layers.append(nn.Linear(in_dim, cfg.fc_dims[-1]))
        self.fc = nn.Sequential(*layers)

        if seed is not None:
            self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        """Reinitialize all weights from a local generator (global RNG untouched)."""
        gen = torch.Generator().manual_seed(seed)
        for module in self.modules():
            if isinstance(module, nn.Embedding):
                nn.init.normal_(module.weight, generator=gen)
            elif isinstance(module, (nn.Conv1d, nn.Linear)):
                fan_in = module.weight.shape[1:].numel()
                bound = 1.0 / float(np.sqrt(fan_in))
                nn.init.uniform_(module.weight, -bound, bound, generator=gen)
                if module.bias is not None:
                    nn.init.uniform_(module.bias, -bound, bound, generator=gen)

    def _tokens_to_tensor(self, tokens, stream: str) -> torch.Tensor:
        cfg = self.config
        expected_len = cfg.smiles_len if stream == "drug" else cfg.protein_len
        vocab_size = cfg.smiles_vocab if stream == "drug" else cfg.protein_vocab
        t = torch.as_tensor(np.asarray(tokens), dtype=torch.long)
        if t.dim() == 1:
            t = t.unsqueeze(0)
        if t.dim() != 2 or t.shape[1] != expected_len:
            raise ShapeMismatchError(
                f"{stream} tokens must be (n, {expected_len}), got {tuple(t.shape)}"
            )
        if t.numel() and (int(t.min()) < 0 or int(t.max()) > vocab_size):
            raise TokenOutOfRangeError(
                f"{stream} tokens must lie in [0, {vocab_size}]"
            )
        return t

    def stream_forward(self, tokens, stream: str) -> tuple[torch.Tensor, torch.Tensor]:
        """Run one input stream; returns (representation, last activated conv map)."""
        if stream not in ("drug", "protein"):
            raise ValueError(f"stream must be 'drug' or 'protein', got {stream!r}")
        t = self._tokens_to_tensor(tokens, stream)
        embedding = self.drug_embedding if stream == "drug" else self.protein_embedding
        conv_stream = self.drug_stream if stream == "drug" else self.protein_stream
        x = embedding(t).permute(0, 2, 1)  # (n, embed_dim, L)
        return conv_stream(x)

    def combined_forward(self, drug_map: torch.Tensor, protein_map: torch.Tensor) -> torch.Tensor:
        """Concatenate the two final feature maps (drug first) and run the third stream."""
        cfg = self.config
        expected = (
            (cfg.stream_filters[-1], cfg.stream_lengths("drug")[-1]),
            (cfg.stream_filters[-1], cfg.stream_lengths("protein")[-1]),
        )
        for name, m, (channels, length) in zip(("drug", "protein"), (drug_map, protein_map), expected):
            if m.dim() != 3 or m.shape[1] != channels or m.shape[2] != length:
                raise ShapeMismatchError(
                    f"{name} map must be (n, {channels}, {length}), got {tuple(m.shape)}"
                )
        if drug_map.shape[0] != protein_map.shape[0]:
            raise ShapeMismatchError("batch sizes differ between the two maps")
        x = torch.cat([drug_map, protein_map], dim=2)
        representation, _ = self.combined_stream(x)
        return representation

    def forward(self, drug_tokens, protein_tokens) -> torch.Tensor:
        """Predict one affinity per (drug, protein) pair; shape (n,)."""
        drug_repr, drug_map = self.stream_forward(drug_tokens, "drug")
        protein_repr, protein_map = self.stream_forward(protein_tokens, "protein")
        if drug_repr.shape[0] != protein_repr.shape[0]:
            raise ShapeMismatchError("drug and protein batch sizes differ")
        combined_repr = self.combined_forward(drug_map, protein_map)
        features = torch.cat([drug_repr, combined_repr, protein_repr], dim=1)
        return self.fc(features).squeeze(-1)


def save_checkpoint(model: ResDTA, path, epoch: int = 0) -> None:
    """Write weights plus config/format metadata as a portable .npz archive."""
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": model.config.to_dict(),
        "epoch": int(epoch),
    }
    arrays = {
        name: param.detach().cpu().numpy()
        for name, param in model.state_dict().items()
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, __meta__=json.dumps(meta), **arrays)


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> tuple[ResDTA, int]:
    """Rebuild a model from :func:`save_checkpoint` output; returns (model, epoch)."""
    try:
        with np.load(path, allow_pickle=False) as data:
            if "__meta__" not in data.files:
                raise CheckpointError(f"{path}: missing checkpoint metadata")
            meta = json.loads(str(data["__meta__"]))
            arrays = {name: data[name] for name in data.files if name != "__meta__"}
    except (OSError, zipfile.BadZipFile, EOFError, ValueError) as exc:
        raise CheckpointIOError(f"cannot read checkpoint {path}: {exc}") from exc

    version = meta.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise VersionMismatchError(
            f"checkpoint format {version}, expected {CHECKPOINT_FORMAT_VERSION}"
        )
    config = ModelConfig(**meta["config"])
    if expected_config is not None and config != expected_config:
        raise ConfigMismatchError("checkpoint config differs from the expected config")

    model = ResDTA(config)
    state = model.state_dict()
    if set(arrays) != set(state):
        raise CheckpointError(f"{path}: weight names do not match the architecture")
    for name, arr in arrays.items():
        if tuple(arr.shape) != tuple(state[name].shape):
            raise CheckpointError(f"{path}: shape mismatch for {name}")
        state[name] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    return model, int(meta.get("epoch", 0))
