// chapters added once the book exists
