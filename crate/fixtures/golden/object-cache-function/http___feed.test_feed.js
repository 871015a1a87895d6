var cache = null;
function items() {
  if (cache == null) {cache = {}; typeof __selfheal!=='undefined'&&__selfheal.activation("ObjectCreator","CannotReadPropertyOfNull|items|http://feed.test/feed.js|3|15","http://feed.test/feed.js");} return cache.items;
}
var list = items();
