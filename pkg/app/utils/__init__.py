# app/utils/__init__.py
# helper ทั่วไป: settings, logging, tensor container, image I/O
