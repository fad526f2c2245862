"""Generate the simplified province polygon table shipped with geoasr.

Each province polygon is the Voronoi cell of an approximate province centroid,
clipped to a coarse outline of the country. Coordinates are (lat, lon) in
degrees; the cells do not overlap.
"""
import sys

from shapely.geometry import MultiPoint, Point, Polygon
from shapely.ops import voronoi_diagram

# id, name, dialect region, centroid lat, centroid lon
PROVINCES = [
    (1, "Beijing", 9, 40.2, 116.4),
    (2, "Tianjin", 9, 39.3, 117.3),
    (3, "Hebei", 9, 38.0, 115.0),
    (4, "Shanxi", 6, 37.6, 112.3),
    (5, "Inner Mongolia", 10, 44.0, 113.0),
    (6, "Liaoning", 4, 41.3, 122.6),
    (7, "Jilin", 4, 43.7, 126.2),
    (8, "Heilongjiang", 4, 47.9, 127.8),
    (9, "Shanghai", 10, 31.2, 121.5),
    (10, "Jiangsu", 1, 32.9, 119.5),
    (11, "Zhejiang", 1, 29.2, 120.1),
    (12, "Anhui", 7, 31.8, 117.2),
    (13, "Fujian", 8, 26.1, 118.0),
    (14, "Jiangxi", 10, 27.6, 115.7),
    (15, "Shandong", 3, 36.3, 118.2),
    (16, "Henan", 3, 33.9, 113.5),
    (17, "Hubei", 7, 30.9, 112.3),
    (18, "Hunan", 7, 27.6, 111.7),
    (19, "Guangdong", 5, 23.4, 113.4),
    (20, "Guangxi", 8, 23.8, 108.8),
    (21, "Hainan", 10, 19.2, 109.7),
    (22, "Chongqing", 2, 30.0, 107.8),
    (23, "Sichuan", 2, 30.6, 102.7),
    (24, "Guizhou", 2, 26.8, 106.9),
    (25, "Yunnan", 8, 25.0, 101.5),
    (26, "Xizang", 10, 31.5, 88.5),
    (27, "Shaanxi", 6, 35.2, 108.9),
    (28, "Gansu", 6, 38.0, 100.5),
    (29, "Qinghai", 10, 35.7, 96.0),
    (30, "Ningxia", 10, 37.3, 106.2),
    (31, "Xinjiang", 10, 41.1, 85.2),
    (32, "Hong Kong", 10, 22.35, 114.15),
    (33, "Macau", 10, 22.17, 113.55),
    (34, "Taiwan", 10, 23.7, 121.0),
]
FALLBACK = 9

# (lon, lat)
OUTLINE = [
    (73.5, 39.5), (80.0, 30.0), (88.0, 27.5), (97.5, 21.0), (108.0, 17.5),
    (122.5, 21.5), (123.0, 30.0), (124.5, 39.5), (135.0, 48.3), (123.0, 53.6),
    (87.0, 49.2),
]


def main(out):
    outline = Polygon(OUTLINE)
    sites = MultiPoint([(lon, lat) for _, _, _, lat, lon in PROVINCES])
    cells = voronoi_diagram(sites, envelope=outline.buffer(20))
    lines = [
        "# geoasr province table: id, name, dialect region, polygon",
        "# polygon vertices are 'lat lon' pairs separated by ';'",
        f"fallback\t{FALLBACK}",
    ]
    for pid, name, region, lat, lon in PROVINCES:
        site = Point(lon, lat)
        cell = next(c for c in cells.geoms if c.contains(site))
        poly = cell.intersection(outline)
        assert poly.geom_type == "Polygon" and poly.contains(site), name
        coords = list(poly.exterior.coords)[:-1]
        verts = ";".join(f"{y:.4f} {x:.4f}" for x, y in coords)
        lines.append(f"{pid}\t{name}\t{region}\t{verts}")
    with open(out, "w") as f:
        f.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main(sys.argv[1])
