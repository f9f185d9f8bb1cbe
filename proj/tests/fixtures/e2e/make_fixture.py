"""Regenerates the two-domain end-to-end fixture tables.

Output is deterministic; the committed CSV files are what the tests read.
"""
import csv
import pathlib
import random

HERE = pathlib.Path(__file__).resolve().parent
GENRES = ["Drama", "Comedy", "Action", "Thriller", "Romance", "Horror", "Documentary", "Animation"]
CATEGORIES = ["sports", "politics", "finance", "health", "travel", "science", "music", "weather"]
WORDS = ["river", "city", "night", "stone", "summer", "signal", "harbor", "garden", "echo", "winter",
         "lantern", "orbit", "meadow", "copper", "falcon", "mirror"]


def title(rng, n):
    return " ".join(w.capitalize() for w in rng.sample(WORDS, n))


def movies(rng):
    items = [(f"m{i:03d}", title(rng, 2), "|".join(rng.sample(GENRES, 2))) for i in range(90)]
    users = []
    for u in range(48):
        users.append((f"u{u:03d}", rng.choice("MF"), rng.choice([18, 25, 35, 45, 56]),
                      rng.choice(["artist", "engineer", "student", "writer", "doctor"]),
                      rng.choice(["Boston", "Denver", "Austin", "Seattle"])))
    ratings = []
    for uid, *_ in users:
        t = 978_300_000 + rng.randrange(0, 10_000_000)
        for iid, *_ in rng.sample(items, rng.randrange(6, 14)):
            t += rng.randrange(3_600, 40 * 86_400)
            ratings.append((uid, iid, rng.randrange(1, 6), t))
    return items, users, ratings


def news(rng):
    items = [(f"n{i:03d}", title(rng, 3), rng.choice(CATEGORIES)) for i in range(90)]
    clicks = []
    for u in range(48):
        uid = f"r{u:03d}"
        t = 1_570_000_000 + rng.randrange(0, 1_000_000)
        for iid, *_ in rng.sample(items, rng.randrange(6, 14)):
            t += rng.randrange(60, 3 * 86_400)
            clicks.append((uid, iid, t))
    return items, clicks


def write(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def main():
    rng = random.Random(20241015)
    items, users, ratings = movies(rng)
    write(HERE / "movies_items.csv", ["movie_id", "title", "genres"], items)
    write(HERE / "movies_users.csv", ["user_id", "gender", "age", "occupation", "location"], users)
    write(HERE / "movies_ratings.csv", ["user_id", "movie_id", "rating", "timestamp"], ratings)
    items, clicks = news(rng)
    write(HERE / "news_items.csv", ["news_id", "title", "category"], items)
    write(HERE / "news_clicks.csv", ["user_id", "news_id", "timestamp"], clicks)


if __name__ == "__main__":
    main()
