"""Ability score and loss-weight reference values, evaluated in exact rationals."""
from fractions import Fraction as F

y = [1, 0, 0, 1]
p = [F(8, 10), F(2, 10), F(1, 10), F(9, 10)]
inter = sum(a * b for a, b in zip(p, y))
union = sum(a * a for a in p) + sum(b * b for b in y)
loss = 1 - 2 * inter / union
conf = inter / sum(y)
print("dice loss", loss, float(loss))
print("ability score", conf * (1 - loss), float(conf * (1 - loss)))

vr = [F(1, 100), F(2, 100), F(3, 100)]
w = [sum(vr) / (len(vr) * v) for v in vr]
print("loss weights", [str(x) for x in w], [float(x) for x in w])
