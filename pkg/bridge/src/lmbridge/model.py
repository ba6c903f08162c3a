"""Checkpoint loading and the three logit views the protocol serves.

Final logits are the model's own last-layer output. Per-layer logits
apply the model's final normalization and output head to the requested
intermediate hidden state, the early-exit construction. Head masking
zeroes the selected heads' slice of the attention output right before
the output projection, removing their contribution for that pass.
"""

from __future__ import annotations

import threading

import torch

from .config import BridgeConfig, ConfigError, load_heads_file


class RequestRangeError(ValueError):
    """A request named a layer or head the model does not have."""


class ModelRunner:
    def __init__(self, config: BridgeConfig):
        from transformers import AutoModelForCausalLM, AutoTokenizer

        self.config = config
        self.tokenizer = AutoTokenizer.from_pretrained(config.model_path)
        self.model = AutoModelForCausalLM.from_pretrained(
            config.model_path, dtype=torch.float32
        )
        self.model.to(config.device)
        self.model.eval()

        decoder = self.model.get_decoder()
        self._layers = decoder.layers
        self._final_norm = decoder.norm
        self._lm_head = self.model.get_output_embeddings()
        for i, layer in enumerate(self._layers):
            attn = getattr(layer, "self_attn", None)
            if attn is None or not hasattr(attn, "o_proj"):
                raise ConfigError(
                    f"layer {i} has no self_attn.o_proj; this architecture "
                    "does not support head masking"
                )

        cfg = self.model.config
        self.num_layers = int(cfg.num_hidden_layers)
        self.num_heads = int(cfg.num_attention_heads)
        self.head_dim = int(getattr(cfg, "head_dim", None)
                            or cfg.hidden_size // cfg.num_attention_heads)
        self.vocab_size = int(cfg.vocab_size)

        if config.served_layers is None:
            self.served_layers = tuple(range(self.num_layers))
        else:
            bad = [l for l in config.served_layers
                   if not 0 <= l < self.num_layers]
            if bad:
                raise ConfigError(
                    f"served_layers {bad} outside the model depth "
                    f"(0..{self.num_layers - 1})"
                )
            self.served_layers = tuple(sorted(set(config.served_layers)))

        self.heads_model_id = None
        self.retrieval_heads: list[tuple[int, int]] = []
        if config.heads_path is not None:
            self.heads_model_id, heads = load_heads_file(config.heads_path)
            for i, (layer, head) in enumerate(heads):
                if not 0 <= layer < self.num_layers:
                    raise ConfigError(
                        f"{config.heads_path}: heads[{i}] = [{layer}, {head}]: "
                        f"layer out of range (model has {self.num_layers} layers)"
                    )
                if not 0 <= head < self.num_heads:
                    raise ConfigError(
                        f"{config.heads_path}: heads[{i}] = [{layer}, {head}]: "
                        f"head out of range (model has {self.num_heads} heads)"
                    )
            self.retrieval_heads = heads

        # One request in flight per model instance.
        self.lock = threading.Lock()

    def capabilities(self) -> dict:
        doc = {
            "vocab_size": self.vocab_size,
            "num_layers": self.num_layers,
            "layer_logits": True,
            "head_masking": True,
            "chat_template_id": self.config.chat_template_id,
            "model_path": self.config.model_path,
            "num_heads": self.num_heads,
            "served_layers": list(self.served_layers),
        }
        if self.heads_model_id is not None:
            doc["retrieval_heads"] = {
                "model_id": self.heads_model_id,
                "heads": [list(pair) for pair in self.retrieval_heads],
            }
        return doc

    def vocab(self) -> dict:
        tokens = self.tokenizer.convert_ids_to_tokens(list(range(self.vocab_size)))
        return {
            "tokens": [t if t is not None else "" for t in tokens],
            "eos_token_id": self.tokenizer.eos_token_id,
        }

    def _validate(self, want_layers, masked_heads) -> None:
        for layer in want_layers:
            if not 0 <= layer < self.num_layers:
                raise RequestRangeError(
                    f"want_layers entry {layer} out of range "
                    f"(0..{self.num_layers - 1})"
                )
            if layer not in self.served_layers:
                raise RequestRangeError(f"layer {layer} is not served")
        for layer, head in masked_heads:
            if not 0 <= layer < self.num_layers:
                raise RequestRangeError(
                    f"masked_heads layer {layer} out of range "
                    f"(0..{self.num_layers - 1})"
                )
            if not 0 <= head < self.num_heads:
                raise RequestRangeError(
                    f"masked_heads head {head} out of range "
                    f"(0..{self.num_heads - 1})"
                )

    def _mask_hooks(self, masked_heads):
        by_layer: dict[int, list[int]] = {}
        for layer, head in masked_heads:
            by_layer.setdefault(layer, []).append(head)
        handles = []
        for layer_idx, heads in by_layer.items():
            o_proj = self._layers[layer_idx].self_attn.o_proj

            def zero_heads(module, args, heads=tuple(heads)):
                (hidden,) = args[:1]
                hidden = hidden.clone()
                for h in heads:
                    hidden[..., h * self.head_dim:(h + 1) * self.head_dim] = 0
                return (hidden,) + args[1:]

            handles.append(o_proj.register_forward_pre_hook(zero_heads))
        return handles

    @torch.no_grad()
    def logits(self, context: str, want_layers=(), masked_heads=()):
        """Next-token logits for a context: (final, {layer: projected})."""
        self._validate(want_layers, masked_heads)
        encoded = self.tokenizer(context, return_tensors="pt")
        ids = encoded["input_ids"].to(self.config.device)
        if ids.numel() == 0:
            raise RequestRangeError("context produced no tokens")

        handles = self._mask_hooks(masked_heads) if masked_heads else []
        try:
            out = self.model(
                input_ids=ids,
                output_hidden_states=bool(want_layers),
                use_cache=False,
            )
        finally:
            for handle in handles:
                handle.remove()

        final = out.logits[0, -1, :].float().tolist()
        per_layer = {}
        for layer in want_layers:
            # hidden_states[0] is the embedding output; block l writes l+1.
            # The last entry already has the final norm applied.
            hidden = out.hidden_states[layer + 1][0, -1, :]
            if layer == self.num_layers - 1:
                projected = self._lm_head(hidden)
            else:
                projected = self._lm_head(self._final_norm(hidden))
            per_layer[int(layer)] = projected.float().tolist()
        return final, per_layer
