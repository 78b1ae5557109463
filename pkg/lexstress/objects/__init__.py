"""Data objects shared by several pipeline stages: manifest records, decode records and the run config"""
