"""Hand simulation of a two-client, two-parameter federated run.

Model: p = sigmoid(w * x + c) per pixel. `w` is shared and aggregated with
ability-score weights; `c` stays on its client. Each client holds one 3x3 case,
trains on the whole image (batch 1, no augmentation) with a soft Dice loss
scaled by its lesion-ratio loss weight, and uses SGD with momentum and weight
decay. Prints the per-round transcript as JSON.
"""
import json
import math

LR, MOMENTUM, DECAY = 0.1, 0.9, 0.0005
ROUNDS, ITERS = 3, 2
INIT_W, INIT_C = 0.5, -0.2
FLOOR, CAP_FACTOR = 1e-6, 10.0

CLIENTS = [
    dict(
        image=[0.1, 0.9, 0.2, 0.8, 0.3, 0.1, 0.2, 0.7, 0.1],
        label=[0, 1, 0, 1, 0, 0, 0, 1, 0],
        mask=[0, 1, 1, 1, 1, 1, 1, 1, 0],
    ),
    dict(
        image=[0.5, 0.4, 0.6, 0.9, 0.3, 0.2, 0.1, 0.2, 0.95],
        label=[0, 0, 0, 1, 0, 0, 0, 0, 1],
        mask=[1] * 9,
    ),
]


def sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def dice_loss_and_grad(p, y):
    inter = sum(a * b for a, b in zip(p, y))
    union = sum(a * a for a in p) + sum(b * b for b in y)
    loss = 1.0 - 2.0 * inter / union
    grad = [(4.0 * inter * a - 2.0 * b * union) / union**2 for a, b in zip(p, y)]
    return loss, grad


def main():
    n = len(CLIENTS)
    state = [dict(w=INIT_W, c=INIT_C, bw=0.0, bc=0.0, lw=1.0, ratios=[]) for _ in CLIENTS]
    global_w = INIT_W
    transcript = []
    for rnd in range(ROUNDS):
        scores, losses, used = [], [], []
        for s, data in zip(state, CLIENTS):
            s["w"] = global_w
            x, y = data["image"], data["label"]
            it_scores, it_losses = [], []
            for _ in range(ITERS):
                p = [sigmoid(s["w"] * xi + s["c"]) for xi in x]
                loss, gp = dice_loss_and_grad(p, y)
                conf = sum(a * b for a, b in zip(p, y)) / sum(y)
                it_scores.append(conf * (1.0 - loss))
                it_losses.append(s["lw"] * loss)
                gl = [s["lw"] * g * a * (1.0 - a) for g, a in zip(gp, p)]
                gw = sum(g * xi for g, xi in zip(gl, x))
                gc = sum(gl)
                s["bw"] = MOMENTUM * s["bw"] + gw + DECAY * s["w"]
                s["bc"] = MOMENTUM * s["bc"] + gc + DECAY * s["c"]
                s["w"] -= LR * s["bw"]
                s["c"] -= LR * s["bc"]
            s["ratios"].append(sum(y) / sum(data["mask"]))
            scores.append(sum(it_scores) / ITERS)
            losses.append(sum(it_losses) / ITERS)
            used.append(s["lw"])
        total = sum(scores)
        agg = [sc / total for sc in scores]
        global_w = sum(sc * s["w"] for sc, s in zip(scores, state)) / total
        vr = [max(sum(s["ratios"]) / len(s["ratios"]), FLOOR) for s in state]
        for s, v in zip(state, vr):
            s["lw"] = min(sum(vr) / (n * v), CAP_FACTOR * n)
            s["w"] = global_w
        transcript.append(
            dict(
                round=rnd,
                p_score=scores,
                aggregation_weight=agg,
                loss_weight=used,
                mean_loss=losses,
                global_weight=global_w,
                offsets=[s["c"] for s in state],
            )
        )
    print(json.dumps(transcript, indent=1))


if __name__ == "__main__":
    main()
