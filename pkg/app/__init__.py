# mobo-sr
