import os

os.environ["ENV"] = "test"
