var Analytics = { track: function (name) { return name; } };
