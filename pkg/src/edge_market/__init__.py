# This file initializes the edge_market package.
