import tempfile
from pathlib import Path
from time import perf_counter

import matplotlib.pyplot as plt
import numpy as np

from CrowdKit.config import EncoderConfig, RunConfig
from CrowdKit.datasets import ingest
from CrowdKit.encoders import load_encoders, make_mock_count_encoder, make_toy_image_encoder
from CrowdKit.experiments import run_eval
from CrowdKit.geometry import build_pyramid
from CrowdKit.synthetic import make_oracle_dataset, radial_image
from CrowdKit.training import TrainConfig, train


def main():

    root = Path(tempfile.mkdtemp(prefix="crowd-kit-demo-"))

    manifest = ingest(make_oracle_dataset(root, n_images=50, p=3, seed=0))
    run = RunConfig(encoder=EncoderConfig(backend="mock"))
    bundle = load_encoders(run.encoder)

    maes = []
    for p in (3, 4, 5):
        start = perf_counter()
        report = run_eval(manifest, bundle, run.inference_config(p=p), use_policy=False, n_threads=-1)
        end = perf_counter()
        print("P={} done. MAE {:.2f}, MSE {:.2f}. This took {}s".format(p, report.mae, report.mse, end - start))
        maes.append(report.mae)

        if p == 3:
            plot_predicted_vs_true(report, "Mock encoders, P=3")

    fig, ax = plt.subplots(figsize=(8, 5))
    plt.title("MAE against grid size")
    plt.plot([3, 4, 5], maes, marker="o")
    plt.xlabel("P")
    plt.ylabel("MAE")

    image = radial_image(root / "radial.png", side=256)
    cfg = TrainConfig(epochs=100, learning_rate=0.1, batch_pyramids=1)
    toy = make_toy_image_encoder()
    _, text_enc = make_mock_count_encoder(seed=0)

    start = perf_counter()
    checkpoint = train([build_pyramid(image, cfg.m, cfg.min_ratio)], toy, text_enc, cfg)
    end = perf_counter()
    print("Toy fine-tuning done. This took {}s".format(end - start))

    fig, ax = plt.subplots(figsize=(8, 5))
    plt.title("Ranking loss while fine-tuning the toy encoder")
    plt.plot(checkpoint.manifest["loss_history"])
    plt.xlabel("epoch")
    plt.ylabel("mean loss")

    plt.show()


def plot_predicted_vs_true(report, title):

    predicted = np.array([r["E"] for r in report.per_image], dtype=np.float64)
    true = np.array([r["C"] for r in report.per_image], dtype=np.float64)

    fig, ax1 = plt.subplots(figsize=(6, 6))

    plt.title("{}".format(title))
    plt.scatter(true, predicted, label="Images")
    limit = max(true.max(), predicted.max(), 1.0)
    plt.plot([0, limit], [0, limit], color="grey", label="Exact")
    plt.xlabel("ground truth")
    plt.ylabel("predicted")
    plt.legend()


if __name__ == "__main__":
    main()
