import os

from moso import (ModelSpec, NoiseConfig, Pruner, SamplingRule, Schedule, TrainConfig,
                  evaluate_coreset, generate_blobs, inject_label_noise, noise_detection, split)

# Create results directory if it doesn't exist
os.makedirs('results', exist_ok=True)

# Two well-separated blobs, 20% of the training labels redrawn
blobs = generate_blobs(num_classes=2, per_class=100, dim=2, spread=1.0, seed=42)
train, test = split(blobs, train_fraction=0.8, seed=0)
train = inject_label_noise(train, NoiseConfig(rate=0.2, seed=5))

spec = ModelSpec('logistic', d=train.d, K=train.K, init_seed=1)
cfg = TrainConfig(epochs=30, batch_size=32, schedule=Schedule('constant', eta=0.5), shuffle_seed=2)

# Train the surrogate, score with 10 sampled steps and prune 30%
pruner = (Pruner(train)
          .surrogate(spec, cfg)
          .score('moso_approx', SamplingRule.uniform_k(10, seed=3))
          .prune(0.3))

detected = noise_detection(pruner.scores, train, bottom_fraction=0.2)
report = evaluate_coreset(train, pruner.coreset, test, spec, cfg, repeats=3)
print(f"noisy recall in the bottom 20%: {detected.recall:.2f} (random: {detected.random_recall:.2f})")
print(f"coreset of {report.coreset_size}: mean test accuracy {report.mean_accuracy:.3f}")
pruner.materialize().to_frame().to_csv('results/coreset.csv', index=False)
