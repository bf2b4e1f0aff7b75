import sqlite3


class Store:
    def __init__(self, path):
        self.conn = sqlite3.connect(path)

    def get(self, key):
        return self.conn.execute("select v from kv where k=?", (key,)).fetchone()
