from stablescene.geom.collide import (
    CONTACT_EPSILON,
    Aabb,
    Penetration,
    aabb_of,
    epa_penetration,
    gjk_distance,
    hulls_intersect,
    world_vertices,
)
from stablescene.geom.hull import ConvexHull, box, box_points, convex_hull, cylinder
from stablescene.geom.rotation import Pose, geodesic_distance

__all__ = [
    "CONTACT_EPSILON",
    "Aabb",
    "ConvexHull",
    "Penetration",
    "Pose",
    "aabb_of",
    "box",
    "box_points",
    "convex_hull",
    "cylinder",
    "epa_penetration",
    "geodesic_distance",
    "gjk_distance",
    "hulls_intersect",
    "world_vertices",
]
