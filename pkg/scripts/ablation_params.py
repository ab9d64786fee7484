"""Parameter counts across the fusion, attention and branch ablations."""

from act_sr.complexity import count_params
from act_sr.config import ModelConfig

VARIANTS = {
    "full": {},
    "no fusion": dict(fusion="none"),
    "fusion T->C": dict(fusion="t_to_c"),
    "fusion C->T": dict(fusion="c_to_t"),
    "sum lateral": dict(lateral="sum"),
    "MHSA only": dict(attention="mhsa_only"),
    "CSTA only": dict(attention="csta_only"),
    "three scales": dict(scale_set=(3, 6, 12)),
    "positional emb.": dict(use_positional_embedding=True),
    "transformer only": dict(branches="transformer"),
    "CNN only": dict(branches="cnn"),
    "x3": dict(scale=3),
    "x4": dict(scale=4),
}


def main() -> None:
    base = count_params(ModelConfig()).total_params
    for name, kw in VARIANTS.items():
        rep = count_params(ModelConfig(**kw))
        parts = "  ".join(f"{k}={v / 1e6:.2f}M" for k, v in rep.params.items())
        print(f"{name:<17}{rep.total_params / 1e6:>8.2f}M {rep.total_params - base:>+12,}   {parts}")


if __name__ == "__main__":
    main()
