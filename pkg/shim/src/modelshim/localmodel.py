"""Local causal-LM backend for real runs.

Imports torch/transformers lazily so the stub path carries no heavyweight
dependencies.  Sampling uses the model's own sampler at the request
temperature; scores are the summed log-probabilities of the target tokens
conditioned on the prompt.
"""

from __future__ import annotations


class _BadRequest(Exception):
    pass


class LocalModelBackend:
    def __init__(self, model_id: str, seed: int):
        try:
            import torch
            from transformers import AutoModelForCausalLM, AutoTokenizer
        except ImportError as exc:
            raise RuntimeError(
                "local_model mode requires the 'local' extra (torch, transformers)"
            ) from exc
        self._torch = torch
        self.seed = seed
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(model_id)
            self.model = AutoModelForCausalLM.from_pretrained(model_id)
        except Exception as exc:
            raise RuntimeError(f"cannot load model {model_id!r}: {exc}") from exc
        self.model.eval()

    def sample(self, body: dict) -> dict:
        from .server import _require

        _require(body, ("role", "prompt", "n"))
        torch = self._torch
        n = int(body["n"])
        temperature = float(body.get("temperature", 1.0))
        max_tokens = int(body.get("max_tokens", 256))
        generator_seed = self.seed if body.get("seed") is None else int(body["seed"])
        torch.manual_seed(generator_seed)

        inputs = self.tokenizer(body["prompt"], return_tensors="pt")
        prompt_len = inputs["input_ids"].shape[1]
        with torch.no_grad():
            output = self.model.generate(
                **inputs,
                do_sample=True,
                temperature=temperature,
                max_new_tokens=max_tokens,
                num_return_sequences=n,
                return_dict_in_generate=True,
                output_scores=True,
                pad_token_id=self.tokenizer.eos_token_id,
            )
        transition_scores = self.model.compute_transition_scores(
            output.sequences, output.scores, normalize_logits=True
        )
        samples = []
        for row in range(n):
            token_ids = output.sequences[row][prompt_len:]
            mask = token_ids != self.tokenizer.pad_token_id
            text = self.tokenizer.decode(token_ids[mask], skip_special_tokens=True)
            logprob = float(transition_scores[row][: int(mask.sum())].sum())
            samples.append({"text": text, "logprob": logprob})
        return {"samples": samples}

    def score(self, body: dict) -> dict:
        from .server import _require

        _require(body, ("role", "prompt", "target"))
        torch = self._torch
        prompt_ids = self.tokenizer(body["prompt"], return_tensors="pt")["input_ids"]
        full_ids = self.tokenizer(
            body["prompt"] + body["target"], return_tensors="pt"
        )["input_ids"]
        with torch.no_grad():
            logits = self.model(full_ids).logits
        log_probs = torch.log_softmax(logits[0, :-1], dim=-1)
        targets = full_ids[0, 1:]
        start = prompt_ids.shape[1] - 1
        picked = log_probs[range(start, targets.shape[0]), targets[start:]]
        return {"logprob": float(picked.sum())}


__all__ = ["LocalModelBackend"]
