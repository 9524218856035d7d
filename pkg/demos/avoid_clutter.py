"""Compose the learned energy with a collision cost at sampling time.

The tv scenario trains on clutter-free scenes: a tv centred above a
bench with a speaker at equal distance on each side. Test scenes drop
immovable clutter boxes into the room. The learned energy knows nothing
about clutter — but because sampling follows gradients, a differentiable
collision penalty can be added on the fly. This script compares that
gradient composition against rejection filtering under an equal sample
budget, at increasing clutter counts.

    python3 demos/avoid_clutter.py
"""

from scenefit.energy import EnergyConfig, init_model
from scenefit.evalharness import advantage_ratios, eval_composition
from scenefit.scene import split_scenes
from scenefit.synthgen import gen_tv
from scenefit.training import TrainConfig, train


def main():
    print("1. Generating 36 clutter-free training scenes plus test scenes "
          "with 2 / 5 / 8 clutter boxes ...")
    scenes, _ = gen_tv(train_n=36, seed=4, clutter_counts=(2, 5, 8))
    train_scenes, test_scenes = split_scenes(scenes)

    print("\n2. Training the energy model on clutter-free scenes ...")
    model = init_model(EnergyConfig(hidden=32, s_em=16),
                       train_scenes[0].feature_dim, seed=0)
    config = TrainConfig(iterations=800, shared_negatives=True, seed=0)
    result = train(model, train_scenes, config,
                   callback=lambda i, l: i % 200 == 0 and print(
                       f"   iteration {i:4d}  loss {l:.3f}"))
    print(f"   final loss {result.losses[-1]:.3f}")

    print("\n3. Sampling 200 arrangements per method per scene. A sample "
          "counts as correct when the tv and speakers are vertically "
          "aligned within 2 cm, the speakers sit equidistant within 2 cm, "
          "and nothing collides (clutter included):\n")
    res = eval_composition(model, test_scenes, budget=200, seed=1)
    print("   clutter   composed-gradient   rejection")
    for level, counts in res.per_level().items():
        print(f"   {level:7d}   {counts['implicit']:17d}   "
              f"{counts['rejection']:9d}")
    ratios = advantage_ratios([res])
    print("\n   advantage ratio by clutter level: "
          + ", ".join(f"{lvl}: {r:.2f}" for lvl, r in ratios.items()))
    print("   (composing the collision gradient pays off more the more "
          "cluttered the room gets)")


if __name__ == "__main__":
    main()
