"""Writes the constant and equator lift fixtures and the equator holonomy
golden value, computed by a polygonal lift (nearest fiber point at each
vertex) with Richardson extrapolation."""

import json
import math


def qmul(a, b):
    a0, a1, a2, a3 = a
    b0, b1, b2, b3 = b
    return (
        a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3,
        a0 * b1 + a1 * b0 + a2 * b3 - a3 * b2,
        a0 * b2 - a1 * b3 + a2 * b0 + a3 * b1,
        a0 * b3 + a1 * b2 - a2 * b1 + a3 * b0,
    )


def conj(a):
    return (a[0], -a[1], -a[2], -a[3])


def dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def normalize(a):
    n = math.sqrt(dot(a, a))
    return tuple(x / n for x in a)


I = (0.0, 1.0, 0.0, 0.0)


def section(g):
    """Some unit z with conj(z) i z = g."""
    # rotation q with q i conj(q) = g is normalize((1 + i.g) + i x g)
    c = (g[1] * 0 - g[2] * 0, 0 * g[2] - 1 * g[2], 1 * g[1] - 0 * g[0])
    q = normalize((1.0 + g[0], c[0], c[1], c[2]))
    z = conj(q)
    img = qmul(qmul(conj(z), I), z)
    assert max(abs(img[k + 1] - g[k]) for k in range(3)) < 1e-12
    return z


def equator(t):
    return (0.0, math.cos(t), math.sin(t))


def polygon_angle(n):
    g0 = section(equator(0.0))
    g = g0
    for m in range(1, n + 1):
        p = section(equator(2 * math.pi * m / n))
        ip = qmul(I, p)
        phi = math.atan2(dot(ip, g), dot(p, g))
        e = (math.cos(phi), math.sin(phi), 0.0, 0.0)
        g = qmul(e, p)
    h = qmul(g, conj(g0))
    return math.atan2(h[1], h[0])


def unwrap_near(a, ref):
    return a + 2 * math.pi * round((ref - a) / (2 * math.pi))


a1 = polygon_angle(20000)
a2 = unwrap_near(polygon_angle(40000), a1)
golden = a2 + (a2 - a1) / 3.0

n = 128
samples = []
for m in range(n + 1):
    t = 2 * math.pi * m / n
    samples.append({"t": t, "gamma": list(equator(t)), "gamma_dot": [0.0, -math.sin(t), math.cos(t)]})
with open("equator.json", "w") as f:
    json.dump({"partition": [0.0, 2 * math.pi], "samples": samples}, f, indent=1)
with open("equator.holonomy", "w") as f:
    f.write(repr(golden) + "\n")

samples = [{"t": t, "gamma": [0.0, 1.0, 0.0], "gamma_dot": [0.0, 0.0, 0.0]} for t in (0.0, 0.5, 1.0)]
with open("constant.json", "w") as f:
    json.dump({"partition": [0.0, 1.0], "samples": samples}, f, indent=1)
