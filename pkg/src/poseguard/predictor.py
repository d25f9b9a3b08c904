"""Goal-conditioned bi-directional CVAE over 36-dim bone-feature sequences.

The model encodes tau observed steps with a GRU, fits prior (observation
only) and recognition (observation + target) diagonal Gaussians over a
latent z, predicts a goal pose from [hidden, z] with a 3-layer MLP, and
decodes delta steps by running a forward recurrent pass from the encoder
state and a backward recurrent pass driven by the goal from step delta
back to step 1. The two hidden states at each step are concatenated and
mapped to a 36-dim pose by a linear readout.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, NumericError, ShapeError
from .fileio import CHECKPOINT_MAGIC, read_container, write_container
from .skeleton import FEATURE_DIM, bone_features_to_joints

_LOGVAR_LIMIT = 20.0


@dataclass(frozen=True)
class PredictorConfig:
    """Model dimensions; tau/delta are the observation/prediction lengths."""

    tau: int = 3
    delta: int = 3
    feature_dim: int = FEATURE_DIM
    encoder_hidden: int = 256
    latent_dim: int = 32
    decoder_hidden: int = 256
    goal_mlp_layers: int = 3
    k_samples: int = 1

    def __post_init__(self):
        for name in ("tau", "delta", "encoder_hidden", "latent_dim",
                     "decoder_hidden", "k_samples"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.feature_dim != FEATURE_DIM:
            raise ConfigError(
                f"feature_dim is fixed at {FEATURE_DIM} (18 joints x 2)"
            )
        if self.goal_mlp_layers != 3:
            raise ConfigError("the goal MLP is fixed at 3 layers")


@dataclass
class LatentGaussian:
    """Diagonal Gaussian over the latent space: mean and log variance."""

    mean: torch.Tensor
    log_variance: torch.Tensor

    def __post_init__(self):
        if self.mean.shape != self.log_variance.shape:
            raise ShapeError("mean and log_variance shapes must match")
        if not bool(torch.isfinite(self.mean).all()) or not bool(
            torch.isfinite(self.log_variance).all()
        ):
            raise NumericError("latent distribution parameters must be finite")


def sample_latent(
    g: LatentGaussian,
    mode: str = "mean",
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Draw z from a LatentGaussian.

    mode="mean" returns the mean; mode="stochastic" reparameterizes as
    mean + sigma * eps with eps ~ N(0, I) drawn from `generator`.
    """
    if mode == "mean":
        return g.mean
    if mode != "stochastic":
        raise ConfigError(f"latent mode must be mean|stochastic, got {mode!r}")
    std = torch.exp(0.5 * g.log_variance)
    eps = torch.randn(
        g.mean.shape, generator=generator,
        dtype=g.mean.dtype, device=g.mean.device,
    )
    return g.mean + std * eps


@dataclass
class PredictionResult:
    """One decoded trajectory: bone features per step plus recovered joints."""

    bones: np.ndarray   # (delta, 36)
    joints: np.ndarray  # (delta, 18, 2) pixels

    @property
    def goal(self) -> np.ndarray:
        """The pose at the final prediction step."""
        return self.bones[-1]

    @classmethod
    def from_features(
        cls, features: np.ndarray, frame_width: float, frame_height: float
    ) -> "PredictionResult":
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != FEATURE_DIM:
            raise ShapeError("features must be (delta, 36)")
        scale = np.array([frame_width, frame_height], dtype=np.float64)
        joints = bone_features_to_joints(features) * scale
        return cls(bones=features, joints=joints)


class PosePredictor(nn.Module):
    """CVAE pose-trajectory predictor; see module docstring for the layout."""

    def __init__(self, config: PredictorConfig):
        super().__init__()
        self.config = config
        f = config.feature_dim
        eh = config.encoder_hidden
        dh = config.decoder_hidden
        lat = config.latent_dim
        self.obs_encoder = nn.GRU(f, eh, batch_first=True)
        self.target_encoder = nn.GRU(f, eh, batch_first=True)
        self.prior_head = nn.Linear(eh, 2 * lat)
        self.recognition_head = nn.Linear(2 * eh, 2 * lat)
        self.goal_mlp = nn.Sequential(
            nn.Linear(eh + lat, dh), nn.ReLU(),
            nn.Linear(dh, dh), nn.ReLU(),
            nn.Linear(dh, f),
        )
        self.forward_init = nn.Linear(eh, dh)
        self.backward_init = nn.Linear(eh, dh)
        self.forward_drive = nn.Linear(dh, dh)
        self.forward_cell = nn.GRUCell(dh, dh)
        self.goal_embed = nn.Linear(f, dh)
        self.backward_cell = nn.GRUCell(dh, dh)
        self.readout = nn.Linear(2 * dh, f)

    def encode(self, observation: torch.Tensor) -> torch.Tensor:
        """(B, tau, 36) -> (B, encoder_hidden) summary of the observation."""
        if observation.ndim != 3 or observation.shape[1:] != (
            self.config.tau, self.config.feature_dim,
        ):
            raise ShapeError(
                f"observation must be (B, {self.config.tau}, "
                f"{self.config.feature_dim}), got {tuple(observation.shape)}"
            )
        _, hidden = self.obs_encoder(observation)
        return hidden.squeeze(0)

    def _split_gaussian(self, params: torch.Tensor) -> LatentGaussian:
        mean, log_var = params.chunk(2, dim=-1)
        log_var = torch.clamp(log_var, -_LOGVAR_LIMIT, _LOGVAR_LIMIT)
        return LatentGaussian(mean, log_var)

    def prior(self, hidden: torch.Tensor) -> LatentGaussian:
        if hidden.shape[-1] != self.config.encoder_hidden:
            raise ShapeError("hidden width does not match encoder_hidden")
        return self._split_gaussian(self.prior_head(hidden))

    def recognition(
        self, hidden: torch.Tensor, target: torch.Tensor
    ) -> LatentGaussian:
        if target.ndim != 3 or target.shape[1:] != (
            self.config.delta, self.config.feature_dim,
        ):
            raise ShapeError(
                f"target must be (B, {self.config.delta}, "
                f"{self.config.feature_dim}), got {tuple(target.shape)}"
            )
        _, target_hidden = self.target_encoder(target)
        joint = torch.cat([hidden, target_hidden.squeeze(0)], dim=-1)
        return self._split_gaussian(self.recognition_head(joint))

    def predict_goal(self, hidden: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        """(B, eh), (B, latent) -> (B, 36) goal pose."""
        if z.shape[-1] != self.config.latent_dim:
            raise ShapeError("z width does not match latent_dim")
        return self.goal_mlp(torch.cat([hidden, z], dim=-1))

    def decode_bidirectional(
        self, hidden: torch.Tensor, goal: torch.Tensor
    ) -> torch.Tensor:
        """(B, eh), (B, 36) -> (B, delta, 36) decoded poses.

        The backward pass consumes the goal at every step while walking
        from step delta down to 1; the forward pass evolves from the
        encoder state without any trajectory-space readout of its own.
        """
        if goal.shape[-1] != self.config.feature_dim:
            raise ShapeError("goal must be 36-dim")
        h_fwd = torch.tanh(self.forward_init(hidden))
        h_bwd = torch.tanh(self.backward_init(hidden))
        goal_in = torch.relu(self.goal_embed(goal))
        backward = []
        for _ in range(self.config.delta):
            h_bwd = self.backward_cell(goal_in, h_bwd)
            backward.append(h_bwd)
        backward.reverse()  # index k now holds the state for step k+1
        poses = []
        for k in range(self.config.delta):
            h_fwd = self.forward_cell(torch.relu(self.forward_drive(h_fwd)), h_fwd)
            poses.append(self.readout(torch.cat([h_fwd, backward[k]], dim=-1)))
        return torch.stack(poses, dim=1)

    def forward_train(
        self,
        observation: torch.Tensor,
        target: torch.Tensor,
        generator: torch.Generator | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor, LatentGaussian, LatentGaussian]:
        """Training path: z sampled stochastically from the recognition head.

        Returns (decoded bones (B, delta, 36), goal prediction (B, 36),
        prior, recognition).
        """
        hidden = self.encode(observation)
        prior = self.prior(hidden)
        recog = self.recognition(hidden, target)
        z = sample_latent(recog, "stochastic", generator)
        goal = self.predict_goal(hidden, z)
        bones = self.decode_bidirectional(hidden, goal)
        return bones, goal, prior, recog

    def forward_infer(
        self,
        observation: torch.Tensor,
        k_samples: int | None = None,
        mode: str = "mean",
        generator: torch.Generator | None = None,
    ) -> torch.Tensor:
        """Inference path: z from the prior; no target involved.

        Returns (B, K, delta, 36) with K = k_samples (config default).
        mode="mean" is deterministic; K > 1 only makes sense with
        mode="stochastic".
        """
        k = self.config.k_samples if k_samples is None else k_samples
        if k < 1:
            raise ConfigError("k_samples must be >= 1")
        hidden = self.encode(observation)
        prior = self.prior(hidden)
        draws = []
        for _ in range(k):
            z = sample_latent(prior, mode, generator)
            goal = self.predict_goal(hidden, z)
            draws.append(self.decode_bidirectional(hidden, goal))
        return torch.stack(draws, dim=1)


def save_checkpoint(
    path,
    model: PosePredictor,
    step: int = 0,
    rng_seed: int = 0,
    extra: dict | None = None,
) -> None:
    """Write model weights + config to a self-describing container file."""
    arrays = {
        k: v.detach().cpu().numpy() for k, v in model.state_dict().items()
    }
    meta = {
        "kind": "checkpoint",
        "format_version": 1,
        "config": asdict(model.config),
        "step": int(step),
        "rng_seed": int(rng_seed),
    }
    if extra:
        meta["extra"] = extra
    write_container(path, CHECKPOINT_MAGIC, meta, arrays)


def load_checkpoint(path) -> tuple[PosePredictor, dict]:
    """Rebuild a PosePredictor (in eval mode) from a checkpoint file."""
    meta, arrays = read_container(path, CHECKPOINT_MAGIC)
    config = PredictorConfig(**meta["config"])
    model = PosePredictor(config)
    state = {k: torch.from_numpy(np.ascontiguousarray(v)) for k, v in arrays.items()}
    model.load_state_dict(state)
    model.eval()
    return model, meta
