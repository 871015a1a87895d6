var Cart = { items: [], add: function (n) { this.items.push(n); } };
