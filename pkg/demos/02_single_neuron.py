"""One LIF neuron under exact integration: a PSP, then regular firing."""

import numpy as np

from cortex_sim.dynamics import (NeuronParams, NeuronState, deposit, lif_period,
                                 make_propagators, step_neuron)

dt = 0.1
p = NeuronParams()
prop = make_propagators(p, dt)

# one 100 pA deposit into a silent cell
s = NeuronState(u=p.u_rest)
deposit(s, 100.0)
trace = []
for _ in range(100):
    s, _ = step_neuron(s, p, prop)
    trace.append(s.u - p.u_rest)
trace = np.array(trace)
print(f"PSP peak {trace.max():.4f} mV at {dt * (trace.argmax() + 1):.1f} ms")

# constant current above rheobase: count the interval between spikes
i_ext = 500.0
s = NeuronState(u=p.u_rest, i_ext=i_ext)
spikes = []
for k in range(5000):
    s, fired = step_neuron(s, p, prop)
    if fired:
        spikes.append(k * dt)
isi = np.diff(spikes)
print(f"{len(spikes)} spikes, simulated ISI {isi.mean():.2f} ms, "
      f"analytic period {lif_period(p, i_ext):.2f} ms")
