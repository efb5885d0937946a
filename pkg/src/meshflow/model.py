"""Full model: embeddings, encoder stack, heads, flow, and per-scene loss."""

from __future__ import annotations

import numpy as np

from . import flow as F
from . import tensor as T
from .config import TrainConfig
from .embedding import (InputGrids, PositionalEncoding, StreamEmbed, embed_inputs,
                        sinusoidal_pe)
from .encoder import AttentionParams, EncoderParams, FusionGates, encoder_forward
from .errors import ConfigurationError, EvaluationError
from .heads import (MaskingPolicy, MeshHeadParams, MeshPrediction,
                    SilhouetteDecoderParams, UpsampleMap, decode_silhouette,
                    mask_tokens, regress_mesh, upsample_mesh)
from .objective import (LossWeights, l1_loss, project_weak_perspective,
                        regress_joints, silhouette_loss, total_loss)
from . import scenes as scenes_module
from .scenes import Scene, joint_regressor
from .tensor import Tensor


def _mask_seed(base_seed: int, step: int, scene_index: int, stream: int) -> int:
    return int(np.random.SeedSequence((base_seed, step, scene_index, stream))
               .generate_state(1)[0])


class Model:
    """Parameter container plus the forward passes that use it."""

    def __init__(self, cfg: TrainConfig):
        cfg.validate()
        self.cfg = cfg
        self._params: dict[str, Tensor] = {}
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0xC0FFEE)))

        d = cfg.d_model
        n = cfg.tokens
        sin_table = Tensor(sinusoidal_pe(n, d))

        def param(name: str, array, std: float | None = None) -> Tensor:
            if std is not None:
                array = rng.normal(0.0, std, array)
            t = Tensor(array, requires_grad=True)
            self._params[name] = t
            return t

        def fan_in_std(fan: int) -> float:
            return 1.0 / np.sqrt(fan)

        self.streams: dict[str, StreamEmbed] = {}
        for stream, channels in (("image", 1), ("depth", 1)):
            patch_dim = cfg.patch_size * cfg.patch_size * channels
            enc = PositionalEncoding(
                learned=param(f"embed.{stream}.pos_learned", (n, d), std=0.02),
                sinusoidal=sin_table,
                gate_learned=param(f"embed.{stream}.gate_learned", np.array(0.5)),
                gate_sinusoidal=param(f"embed.{stream}.gate_sinusoidal", np.array(0.5)),
            )
            self.streams[stream] = StreamEmbed(
                weight=param(f"embed.{stream}.weight", (patch_dim, d),
                             std=fan_in_std(patch_dim)),
                bias=param(f"embed.{stream}.bias", np.zeros(d)),
                encoding=enc,
            )


        self.mask_vectors = {"image": param("mask.image.token", (d,), std=0.02)}

        def attention(prefix: str) -> AttentionParams:
            std = fan_in_std(d)
            return AttentionParams(
                w_q=param(f"{prefix}.w_q", (d, d), std=std),
                w_k=param(f"{prefix}.w_k", (d, d), std=std),
                w_v=param(f"{prefix}.w_v", (d, d), std=std),
                w_o=param(f"{prefix}.w_o", (d, d), std=std),
                heads=cfg.heads,
            )

        self.blocks: list[EncoderParams] = []
        for i in range(cfg.encoder_blocks):
            p = f"enc{i}"
            self.blocks.append(EncoderParams(
                self_image=attention(f"{p}.self_image"),
                self_depth=attention(f"{p}.self_depth"),
                cross=attention(f"{p}.cross"),
                gates=FusionGates(param(f"{p}.gates", np.zeros(3))),
                ln_gamma=param(f"{p}.ln_gamma", np.ones(d)),
                ln_beta=param(f"{p}.ln_beta", np.zeros(d)),
                mlp_w1=param(f"{p}.mlp_w1", (d, 4 * d), std=fan_in_std(d)),
                mlp_b1=param(f"{p}.mlp_b1", np.zeros(4 * d)),
                mlp_w2=param(f"{p}.mlp_w2", (4 * d, d), std=fan_in_std(4 * d)),
                mlp_b2=param(f"{p}.mlp_b2", np.zeros(d)),
            ))

        head_hidden = 4 * d
        out_dim = 6 * cfg.v_coarse + 3
        self.mesh_head = MeshHeadParams(
            w1=param("head.w1", (d, head_hidden), std=fan_in_std(d)),
            b1=param("head.b1", np.zeros(head_hidden)),
            w2=param("head.w2", np.zeros((head_hidden, out_dim))),
            b2=param("head.b2", np.zeros(out_dim)),
            v_coarse=cfg.v_coarse,
            mesh_scale=cfg.mesh_scale,
        )

        self.upsampler = UpsampleMap(
            matrix=param("upsample.matrix", (cfg.v_full, cfg.v_coarse), std=0.02),
            bias=param("upsample.bias", np.zeros((cfg.v_full, 3))),
        )

        c1 = max(d // 2, 2)
        c2 = max(d // 4, 2)
        self.decoder = SilhouetteDecoderParams(
            conv1_w=param("decoder.conv1_w", (d, c1, 4, 4), std=fan_in_std(d * 4)),
            conv1_b=param("decoder.conv1_b", np.zeros(c1)),
            conv2_w=param("decoder.conv2_w", (c1, c2, 4, 4), std=fan_in_std(c1 * 4)),
            conv2_b=param("decoder.conv2_b", np.zeros(c2)),
            out_w=param("decoder.out_w", np.zeros((c2, 1))),
            out_b=param("decoder.out_b", np.zeros(1)),
            grid_rows=cfg.height // cfg.patch_size,
            grid_cols=cfg.width // cfg.patch_size,
            dropout=cfg.dropout,
        )

        self.flow = F.build_flow(cfg.flow_dim, cfg.flow_layers, cfg.flow_hidden,
                                 rng=rng)
        for i, layer in enumerate(self.flow.layers):
            for net_name, net in (("scale", layer.scale_net),
                                  ("shift", layer.translate_net)):
                for leaf in ("w1", "b1", "w2", "b2", "w3", "b3"):
                    self._params[f"flow.l{i}.{net_name}.{leaf}"] = getattr(net, leaf)

        self.joint_map = joint_regressor(cfg.v_coarse)

    def parameters(self) -> dict[str, Tensor]:
        return self._params

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(tensors)
        extra = set(tensors) - set(self._params)
        if missing or extra:
            raise ConfigurationError(
                f"checkpoint mismatch: missing {sorted(missing)[:4]}, "
                f"unexpected {sorted(extra)[:4]}")
        for name, arr in tensors.items():
            target = self._params[name]
            if target.shape != arr.shape:
                raise ConfigurationError(
                    f"checkpoint tensor {name} has shape {arr.shape}, "
                    f"expected {target.shape}")
            target.data = np.array(arr, dtype=np.float64)

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._params.items()}

    # --- forward passes ---

    def encode(self, scene: Scene, train_mode: bool = False, step: int = 0,
               scene_index: int = 0) -> Tensor:
        cfg = self.cfg
        # depth enters at unit scale so both streams start comparably sized
        grids = InputGrids(image=scene.image,
                           depth=scene.depth / scenes_module.BACKGROUND_DEPTH)
        mask_image = None
        if train_mode and cfg.masking and cfg.mask_ratio > 0:
            # image features are masked before the positional term, so masked
            # slots keep their position identity; the depth stream stays
            # intact and its global statistics keep supervising pose
            policy = MaskingPolicy(
                ratio=cfg.mask_ratio, token=self.mask_vectors["image"],
                seed=_mask_seed(cfg.seed, step, scene_index, 0))
            mask_image = lambda tokens: mask_tokens(tokens, policy)[0]
        image_tokens, depth_tokens = embed_inputs(
            grids, cfg.patch_size, self.streams["image"], self.streams["depth"],
            mask_image=mask_image)
        z = encoder_forward(image_tokens,
                            depth_tokens if cfg.depth_stream else None,
                            self.blocks[0])
        for block in self.blocks[1:]:
            z = encoder_forward(z, z if cfg.depth_stream else None, block)
        return z

    def predict(self, scene: Scene) -> dict:
        """Inference pass: masking and dropout disabled."""
        z = self.encode(scene, train_mode=False)
        pred = regress_mesh(z, self.mesh_head)
        out = {
            "mu": pred.mu.data.copy(),
            "sigma": pred.sigma.data.copy(),
            "camera": pred.camera.data.copy(),
            "full_mesh": upsample_mesh(pred.mu, self.upsampler).data.copy(),
        }
        if self.cfg.silhouette:
            out["silhouette"] = decode_silhouette(z, self.decoder).data.copy()
        return out

    def scene_loss(self, scene: Scene, weights: LossWeights | None = None,
                   train_mode: bool = True, step: int = 0, scene_index: int = 0
                   ) -> tuple[Tensor, dict[str, float]]:
        """Forward pass plus every enabled loss term for one scene."""
        cfg = self.cfg
        z = self.encode(scene, train_mode=train_mode, step=step,
                        scene_index=scene_index)
        pred: MeshPrediction = regress_mesh(z, self.mesh_head)
        upsample_mesh(pred.mu, self.upsampler)  # exercised in the training graph

        components: dict[str, Tensor] = {}

        def term(name: str, fn):
            try:
                components[name] = fn()
            except EvaluationError as err:
                raise EvaluationError(f"loss component '{name}': {err}") from err

        term("vertices", lambda: l1_loss(pred.mu, scene.gt_vertices))
        joints = regress_joints(pred.mu, self.joint_map)
        term("pose3d", lambda: l1_loss(joints, scene.gt_j3d))
        term("pose2d", lambda: l1_loss(
            project_weak_perspective(joints, pred.camera), scene.gt_j2d))
        if cfg.distribution:
            std = F.ResidualStandardization(mu=pred.mu, sigma=pred.sigma)
            term("rle", lambda: F.rle_loss(std, scene.gt_vertices, self.flow))
        if cfg.silhouette:
            rng = (np.random.default_rng(
                np.random.SeedSequence((cfg.seed, step, scene_index, 17)))
                if train_mode else None)
            term("silhouette", lambda: silhouette_loss(
                decode_silhouette(z, self.decoder, train_mode=train_mode, rng=rng),
                scene.silhouette))

        effective = self.effective_weights() if weights is None else weights
        total = total_loss(components, effective)
        return total, {name: comp.item() for name, comp in components.items()}

    def effective_weights(self) -> LossWeights:
        cfg = self.cfg
        return LossWeights(
            lambda_d=cfg.lambda_d if cfg.distribution else 0.0,
            lambda_v=cfg.lambda_v,
            lambda_3d=cfg.lambda_3d,
            lambda_2d=cfg.lambda_2d,
            lambda_s=cfg.lambda_s if cfg.silhouette else 0.0,
        )
