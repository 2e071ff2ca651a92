"""Plain-Python reference of the tree agents' learning loop, used as a test oracle.

Draws are supplied explicitly so that tests can replay or relabel them.
"""
import math

from maqt.policy_tree import Schedule, active_set, all_schedules, prescribes

IDLE, SUCCESS, COLLISION = 0, 1, 2


def first_argmax(weights):
    best = None
    for s in sorted(weights, key=lambda s: s.index):
        if best is None or weights[s] > weights[best]:
            best = s
    return best


def shift_schedule(s, shift):
    return Schedule((s.offset + shift) % s.period, s.level)


class RefAgent:
    def __init__(self, depth, params, weights, maqt, t=0):
        self.depth = depth
        self.p = params
        self.w = dict(weights)
        self.maqt = maqt
        self.t = t
        self.settled = False
        self.streak = 0
        self.selected = first_argmax(self.w)

    def decide(self):
        if self.maqt and self.settled:
            return prescribes(self.selected, self.t)
        self.selected = first_argmax(self.w)
        policy = {self.selected}
        if not self.maqt:
            policy |= {s for s, v in self.w.items() if v > self.p.eta}
        return any(prescribes(s, self.t) for s in policy)

    def observe(self, feedback, transmit, update_draws, relinquish_draw, redistribution_draws):
        """``redistribution_draws`` maps each schedule to its uniform variate."""
        if self.maqt and self.settled:
            if feedback == SUCCESS:
                self.streak += 1
            else:
                self.settled, self.streak = False, 0
            self.t += 1
            return
        good = (feedback == IDLE and not transmit) or (feedback == SUCCESS and transmit)
        alpha = self.p.alpha_plus if good else self.p.alpha_minus
        before = sum(self.w.values())
        path = active_set(self.t, self.depth)
        for s, u in zip(path, update_draws):
            self.w[s] *= math.exp(alpha * u)
        if not self.maqt and relinquish_draw <= self.p.epsilon:
            for s in path:
                self.w[s] = 0.0
        after = sum(self.w.values())
        delta = before - after
        if delta > 0 and after < self.p.w_init * len(self.w):
            total = sum(redistribution_draws.values())
            for s in self.w:
                self.w[s] += delta * redistribution_draws[s] / total
        for s in self.w:
            self.w[s] = min(self.w[s], 1.0)
        self.t += 1
        if self.maqt:
            self.streak = self.streak + 1 if feedback == SUCCESS else 0
            if self.streak >= 1 << self.depth:
                self.settled = True

def heap_order(depth):
    return all_schedules(depth)
