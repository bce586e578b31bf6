"""Grid geometry and road-network routing in a nutshell.

Builds a small city grid, shows how coordinates map to cells and
regions, and runs a few shortest-path queries over a synthetic road
network.
"""

import numpy as np

from fleetsim.geo import (
    GridSpec, Location, aggregate_to_regions, block_region_map, cell_of,
    center_of, haversine,
)
from fleetsim.roadgraph import nearest_node, shortest_path
from fleetsim.harness.synth import build_road_grid

grid = GridSpec(rows=8, cols=8, cell_size=500.0, origin=Location(40.0, -74.0))
print(f"grid: {grid.rows}x{grid.cols} cells of {grid.cell_size:.0f} m")
print(f"angular cell size: {grid.d_lat:.6f} deg lat x {grid.d_lon:.6f} deg lon")

loc = Location(40.012, -73.985)
cell = cell_of(loc, grid)
print(f"\n{loc} falls in cell {cell}, center {center_of(cell, grid)}")

# a 2x2 block partition: four regions
regions = block_region_map(grid, 4, 4)
heat = np.zeros(grid.shape)
heat[1, 1] = 3
heat[6, 6] = 5
print("per-region totals of a heat map:", aggregate_to_regions(heat, regions))

graph = build_road_grid(grid)
print(f"\nroad graph: {graph.node_count} nodes, {graph.edge_count} directed edges")

a = Location(40.001, -73.999)
b = Location(40.03, -73.96)
na, nb = nearest_node(a, graph), nearest_node(b, graph)
path = shortest_path(na, nb, graph)
print(f"shortest path {na} -> {nb}: {len(path.nodes)} nodes, "
      f"{path.total_length/1000:.2f} km (straight line "
      f"{haversine(a, b)/1000:.2f} km)")
