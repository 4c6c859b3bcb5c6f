"""Sub-graph algebra on a toy graph: who receives, who sends, who is remote."""

from cortex_sim.graph import (build_graph, indegree_subgraph, outdegree_subgraph,
                              spiking_subgraph, split_local_remote, subgraph_join, subgraph_meet)

# a 6-vertex ring with two chords
g = build_graph(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3), (4, 1)])
print(g)

# rank A owns {0, 1, 2}, rank B owns {3, 4, 5}
a, b = {0, 1, 2}, {3, 4, 5}
in_a, in_b = indegree_subgraph(g, a), indegree_subgraph(g, b)
print("edges into A:", in_a.edge_pairs())
print("edges into B:", in_b.edge_pairs())

# disjoint owners never share a target or an incoming edge; sources may overlap
m = subgraph_meet(in_a, in_b)
print("A meet B: posts", m.post.tolist(), "edges", m.edge_pairs(), "shared pres", m.pre.tolist())
print("A join B covers the graph:", len(subgraph_join(in_a, in_b).edge_pairs()) == g.n_edges)

# which of A's inputs come from another rank
local, remote = split_local_remote(in_a, a)
print("local inputs of A: ", local.edge_pairs())
print("remote inputs of A:", remote.edge_pairs())

# only edges whose source fired this step need work
print("work for A if {5, 4} spike:", spiking_subgraph(in_a, {5, 4}).edge_pairs())
print("fan-out of 0:", outdegree_subgraph(g, {0}).edge_pairs())
