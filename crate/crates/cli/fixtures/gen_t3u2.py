import itertools, json, math, random
rng = random.Random(20261019)
T, U, V = 3, 2, 3
tokens = [0, 2]
logp = []
for t in range(T):
    for u in range(U + 1):
        z = [rng.gauss(0, 1.5) for _ in range(V + 1)]
        m = max(z)
        lse = m + math.log(math.fsum(math.exp(x - m) for x in z))
        logp.extend(x - lse for x in z)
def lp(t, u, k):
    return logp[(t * (U + 1) + u) * (V + 1) + k]
def walk(steps):
    t = u = 0; s = 0.0
    for step in steps:
        if step == 'e':
            s += lp(t, u, tokens[u]); u += 1
        else:
            s += lp(t, u, V); t += 1
    return s, t, u
def prefix_mass(n):
    # partial alignments ending with the n-th emission, all frames < T
    if n == 0:
        return 1.0
    terms = []
    for b in range(T):
        for pos in itertools.combinations(range(n - 1 + b), b):
            steps = ['e'] * (n - 1 + b)
            for p in pos: steps[p] = 'b'
            steps.append('e')
            s, t, u = walk(steps)
            terms.append(math.exp(s))
    return math.fsum(terms)
full = []
for pos in itertools.combinations(range(U + T - 1), T - 1):
    steps = ['e'] * (U + T - 1)
    for p in pos: steps[p] = 'b'
    s, t, u = walk(steps)
    full.append(math.exp(s + lp(T - 1, U, V)))
loglik = math.log(math.fsum(full))
pm = [prefix_mass(n) for n in range(U + 1)]
cond = [pm[n] / pm[n - 1] for n in range(1, U + 1)]
json.dump({"t": T, "u": U, "v": V, "logp": logp, "tokens": tokens}, open("t3u2.json", "w"))
json.dump({"paths": len(full), "loss": -loglik, "conditionals": cond,
           "final_blank_logp": loglik - math.log(pm[U])}, open("t3u2.expected.json", "w"), indent=2)
