"""Standalone hand trace of one adaptation step on a 2-class, 4-sample toy.

Pure Python (no numpy, nothing imported from the package) so it can serve as
an independent oracle. Prints every intermediate value as JSON; the numbers
are frozen into tests/test_golden_trace.py.

Setup: a single dense layer (2 -> 2) followed by softmax, one augmentation
with zero strength (teacher output = plain teacher forward).
"""

import json
import math

X = [[3.0, 0.0], [0.0, 0.5], [0.6, 0.6], [-1.0, 0.5]]
STUDENT_W = [[1.0, -0.5], [0.25, 0.75]]
STUDENT_B = [0.1, -0.1]
TEACHER_W = [[0.8, -0.4], [0.3, 0.6]]
TEACHER_B = [0.0, 0.0]
PREV_FINAL = 0.8
PI0 = (PREV_FINAL + 1.0 / 2) / 2  # second domain, C = 2
LAM, TP, ALPHA, BETA, LR = 0.9, 0.6, 0.05, 0.9, 0.1


def dense(x, W, b):
    return [[sum(row[k] * W[k][j] for k in range(len(row))) + b[j] for j in range(len(b))] for row in x]


def softmax_rows(z):
    out = []
    for row in z:
        m = max(row)
        e = [math.exp(v - m) for v in row]
        s = sum(e)
        out.append([v / s for v in e])
    return out


def argmax(row):
    best = 0
    for k in range(1, len(row)):
        if row[k] > row[best]:
            best = k
    return best


n, C = len(X), 2

# 1. teacher pseudo-labels and predictions
yhat = softmax_rows(dense(X, TEACHER_W, TEACHER_B))
preds = [argmax(r) for r in yhat]
conf = [max(r) for r in yhat]

# 2. threshold EMA
mean_conf = sum(conf) / n
pi = LAM * PI0 + (1 - LAM) * mean_conf

# 3. class-average confidence, rescale ratio, class-wise threshold
delta = [sum(conf[i] for i in range(n) if preds[i] == c) / n for c in range(C)]
tau = [d / max(delta) for d in delta]
pi_c = [pi * t for t in tau]

# 4. split
high = [i for i in range(n) if conf[i] >= pi_c[preds[i]]]
low = [i for i in range(n) if i not in high]

# 5. sharpened targets (exponent 1/Tp)
e = 1.0 / TP
target = {}
for i in high:
    w = [p**e for p in yhat[i]]
    s = sum(w)
    target[i] = [v / s for v in w]

# 6. student forward
ybar = softmax_rows(dense(X, STUDENT_W, STUDENT_B))

# 7. losses and dL/dprobs
L_pst = sum(-sum(target[i][k] * math.log(ybar[i][k]) for k in range(C)) for i in high) / len(high)
comp = [[1.0 if yhat[i][k] < ALPHA else 0.0 for k in range(C)] for i in range(n)]
L_neg = sum(-sum(comp[i][k] * math.log(1 - ybar[i][k]) for k in range(C)) for i in range(n)) / n
g = [[0.0] * C for _ in range(n)]
for i in high:
    for k in range(C):
        g[i][k] += -target[i][k] / (len(high) * ybar[i][k])
for i in range(n):
    for k in range(C):
        g[i][k] += comp[i][k] / (n * (1 - ybar[i][k]))

# 8. softmax Jacobian and dense-layer gradients
dz = []
for i in range(n):
    inner = sum(ybar[i][k] * g[i][k] for k in range(C))
    dz.append([ybar[i][k] * (g[i][k] - inner) for k in range(C)])
dW = [[sum(X[i][a] * dz[i][j] for i in range(n)) for j in range(C)] for a in range(2)]
db = [sum(dz[i][j] for i in range(n)) for j in range(C)]

# 9. GD on the student, EMA on the teacher
new_sW = [[STUDENT_W[a][j] - LR * dW[a][j] for j in range(C)] for a in range(2)]
new_sb = [STUDENT_B[j] - LR * db[j] for j in range(C)]
new_tW = [[BETA * TEACHER_W[a][j] + (1 - BETA) * new_sW[a][j] for j in range(C)] for a in range(2)]
new_tb = [BETA * TEACHER_B[j] + (1 - BETA) * new_sb[j] for j in range(C)]

print(
    json.dumps(
        {
            "yhat": yhat,
            "predictions": preds,
            "mean_conf": mean_conf,
            "pi": pi,
            "delta": delta,
            "tau": tau,
            "pi_c": pi_c,
            "high": high,
            "low": low,
            "target_high": [target[i] for i in high],
            "ybar": ybar,
            "L_pst": L_pst,
            "comp": comp,
            "L_neg": L_neg,
            "L_total": L_pst + L_neg,
            "dW": dW,
            "db": db,
            "student_W": new_sW,
            "student_b": new_sb,
            "teacher_W": new_tW,
            "teacher_b": new_tb,
        },
        indent=1,
    )
)
